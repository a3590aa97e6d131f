#pragma once

#include <string>
#include <utility>
#include <vector>

#include "loopcalc/factor_graph.hpp"

namespace loopcalc {

// Model document: {"q": int,
//                  "variables": [{"id": int, "h": [q reals]}],
//                  "factors": [{"id": int, "neighbors": [ids],
//                               "entries": [{"x": [symbols], "f": real}]}]}
// Ids must be 0-based and contiguous within their kind.
FactorGraph model_from_json_text(const std::string& text);
FactorGraph load_model(const std::string& path);
std::string model_to_json_text(const FactorGraph& g);

// Edge list file: one "u v" pair per line, 0-indexed; '#' starts a comment.
std::vector<std::pair<int, int>> load_edge_list(const std::string& path);

// FNV-1a 64-bit over the raw file bytes, hex-encoded; used for report digests.
std::string content_digest(const std::string& bytes);
std::string file_digest(const std::string& path);

}  // namespace loopcalc
