// Copyright 2026 lspkit Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef LSP_TESTS_CLI_FIXTURES_HPP_
#define LSP_TESTS_CLI_FIXTURES_HPP_

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace lsp {

inline std::string bin() {
  const char* b = std::getenv("LSPKIT_BIN");
  return b == nullptr ? std::string("./lspkit") : std::string(b);
}

inline std::string profiles_dir() {
  const char* dir = std::getenv("LSPKIT_PROFILES");
  return dir == nullptr ? std::string("profiles") : std::string(dir);
}

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline void fresh_dir(const std::string& dir) {
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
}

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

// Runs the binary through the shell; env_prefix can carry VAR=value pairs.
inline CliResult run_cli(const std::string& args, const std::string& tag,
                         const std::string& env_prefix = "") {
  const std::string out_file = tag + ".stdout.txt";
  const std::string err_file = tag + ".stderr.txt";
  std::string cmd = env_prefix + (env_prefix.empty() ? "" : " ") + bin() + " " + args + " >" +
                    out_file + " 2>" + err_file;
  const int rc = std::system(cmd.c_str());
  CliResult res;
  if (rc != -1 && WIFEXITED(rc)) res.code = WEXITSTATUS(rc);
  res.out = slurp(out_file);
  res.err = slurp(err_file);
  return res;
}

inline std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

}  // namespace lsp

#endif  // LSP_TESTS_CLI_FIXTURES_HPP_
