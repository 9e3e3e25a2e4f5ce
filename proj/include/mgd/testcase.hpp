#pragma once

/**
 * testcase.hpp - one evaluation instance.
 *
 * A case pins a dereference site: everything in the file up to and including
 * the '.' (prefix), the method remainder the original author wrote (ground
 * truth), and optionally the text after the method (suffix, for
 * fill-in-the-middle prompts). Embedding the text directly means mock and
 * fixture runs need no source repository; only compilation checks and live
 * language servers do, via workspace_root.
 */

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgd/common.hpp"

namespace mgd {

struct TestCase {
  std::string case_id;
  std::filesystem::path workspace_root;  // may be empty for hermetic runs
  std::string file;                      // workspace-relative source path
  std::string prefix;                    // file start through the trigger '.'
  std::optional<std::string> suffix;     // text after the ground-truth method
  std::string ground_truth;              // after the '.' through the method close
  std::size_t dot_offset = 0;            // byte offset of the '.'; == prefix.size()-1
  int open_depth = 1;                    // brace depth at the frontier
  std::vector<std::string> class_expr_type_files;  // workspace-relative, for aux context
};

inline void to_json(nlohmann::json& j, const TestCase& c) {
  j = nlohmann::json{{"case_id", c.case_id},
                     {"workspace_root", c.workspace_root.string()},
                     {"file", c.file},
                     {"prefix", c.prefix},
                     {"ground_truth", c.ground_truth},
                     {"dot_offset", c.dot_offset},
                     {"open_depth", c.open_depth}};
  if (c.suffix) j["suffix"] = *c.suffix;
  if (!c.class_expr_type_files.empty()) j["class_expr_type_files"] = c.class_expr_type_files;
}

inline void from_json(const nlohmann::json& j, TestCase& c) {
  c.case_id = j.at("case_id").get<std::string>();
  c.workspace_root = j.value("workspace_root", std::string());
  c.file = j.value("file", std::string());
  c.prefix = j.at("prefix").get<std::string>();
  if (j.contains("suffix")) c.suffix = j["suffix"].get<std::string>();
  c.ground_truth = j.at("ground_truth").get<std::string>();
  c.dot_offset = j.at("dot_offset").get<std::size_t>();
  c.open_depth = j.at("open_depth").get<int>();
  c.class_expr_type_files = j.value("class_expr_type_files", std::vector<std::string>{});
}

}  // namespace mgd
