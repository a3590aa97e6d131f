#include "loopcalc/model_io.hpp"

#include <cstdint>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "loopcalc/errors.hpp"
#include "loopcalc/gaussian_io.hpp"

namespace loopcalc {

namespace {

using nlohmann::json;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

FactorGraph model_from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError(std::string("model parse error: ") + e.what());
  }
  try {
    FactorGraph g;
    g.q = doc.at("q").get<int>();
    const auto& vars = doc.at("variables");
    g.variables.resize(vars.size());
    for (const auto& v : vars) {
      const int id = v.at("id").get<int>();
      if (id < 0 || id >= static_cast<int>(vars.size())) {
        throw InputError("variable id " + std::to_string(id) + " not contiguous 0-based");
      }
      g.variables[id].h = v.at("h").get<std::vector<double>>();
    }
    const auto& facs = doc.at("factors");
    g.factors.resize(facs.size());
    for (const auto& f : facs) {
      const int id = f.at("id").get<int>();
      if (id < 0 || id >= static_cast<int>(facs.size())) {
        throw InputError("factor id " + std::to_string(id) + " not contiguous 0-based");
      }
      FactorNode node;
      node.neighbors = f.at("neighbors").get<std::vector<int>>();
      for (const auto& e : f.at("entries")) {
        FactorEntry entry;
        entry.x = e.at("x").get<std::vector<Symbol>>();
        entry.f = e.at("f").get<double>();
        node.entries.push_back(std::move(entry));
      }
      g.factors[id] = std::move(node);
    }
    g.build();
    return g;
  } catch (const json::exception& e) {
    throw InputError(std::string("model schema error: ") + e.what());
  }
}

FactorGraph load_model(const std::string& path) {
  return model_from_json_text(read_file(path));
}

std::string model_to_json_text(const FactorGraph& g) {
  nlohmann::ordered_json doc;
  doc["q"] = g.q;
  doc["variables"] = json::array();
  for (int i = 0; i < g.num_variables(); ++i) {
    doc["variables"].push_back({{"id", i}, {"h", g.variables[i].h}});
  }
  doc["factors"] = json::array();
  for (int a = 0; a < g.num_factors(); ++a) {
    nlohmann::ordered_json f;
    f["id"] = a;
    f["neighbors"] = g.factors[a].neighbors;
    f["entries"] = json::array();
    for (const auto& entry : g.factors[a].entries) {
      f["entries"].push_back({{"x", entry.x}, {"f", entry.f}});
    }
    doc["factors"].push_back(std::move(f));
  }
  return doc.dump();
}

std::vector<std::pair<int, int>> load_edge_list(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<std::pair<int, int>> edges;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    int u, v;
    if (!(ls >> u)) continue;  // blank line
    if (!(ls >> v)) {
      throw InputError(path + ":" + std::to_string(lineno) + ": expected \"u v\" pair");
    }
    edges.emplace_back(u, v);
  }
  return edges;
}

GaussianModel gaussian_from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError(std::string("gaussian model parse error: ") + e.what());
  }
  try {
    const auto rows = doc.at("J").get<std::vector<std::vector<double>>>();
    const int n = static_cast<int>(rows.size());
    GaussianModel m;
    m.J.resize(n, n);
    for (int i = 0; i < n; ++i) {
      if (static_cast<int>(rows[i].size()) != n) {
        throw InputError("gaussian model: J is not square");
      }
      for (int j = 0; j < n; ++j) m.J(i, j) = rows[i][j];
    }
    m.h = Eigen::VectorXd::Zero(n);
    if (doc.contains("h")) {
      const auto h = doc.at("h").get<std::vector<double>>();
      if (static_cast<int>(h.size()) != n) throw InputError("gaussian model: |h| != N");
      for (int i = 0; i < n; ++i) m.h(i) = h[i];
    }
    return m;
  } catch (const json::exception& e) {
    throw InputError(std::string("gaussian model schema error: ") + e.what());
  }
}

GaussianModel load_gaussian(const std::string& path) {
  return gaussian_from_json_text(read_file(path));
}

std::string content_digest(const std::string& bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ull;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return std::string("fnv1a64:") + buf;
}

std::string file_digest(const std::string& path) { return content_digest(read_file(path)); }

}  // namespace loopcalc
