#pragma once

// Run manifests: the command line, the resolved configuration, and git-style
// content hashes of every input and output file.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "esb/errors.hpp"

namespace esb {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// SHA-1 of "blob <size>\0<content>", as `git hash-object` computes it.
inline std::string git_blob_hash(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw NumericalError("cannot allocate a digest context");
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &length) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw NumericalError("SHA-1 digest failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < length; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

inline std::string file_hash(const std::string& path) { return git_blob_hash(read_file(path)); }

struct FileRecord {
  std::string path;
  std::string hash;
};

struct Manifest {
  static constexpr const char* schema = "esb-manifest 1";
  std::string command;
  std::vector<std::string> arguments;  // argv after the program name
  nlohmann::json config = nlohmann::json::object();
  std::vector<FileRecord> inputs;
  std::vector<FileRecord> outputs;

  void add_input(const std::string& path) { inputs.push_back({path, file_hash(path)}); }
  void add_output(const std::string& path) { outputs.push_back({path, file_hash(path)}); }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["schema"] = schema;
    j["command"] = command;
    j["arguments"] = arguments;
    j["config"] = config;
    auto files = [](const std::vector<FileRecord>& v) {
      nlohmann::json a = nlohmann::json::array();
      for (const auto& f : v) a.push_back({{"path", f.path}, {"hash", f.hash}});
      return a;
    };
    j["inputs"] = files(inputs);
    j["outputs"] = files(outputs);
    return j;
  }

  static Manifest from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.value("schema", "") != schema) throw ValidationError("not an esb manifest");
    Manifest m;
    try {
      m.command = j.at("command").get<std::string>();
      m.arguments = j.at("arguments").get<std::vector<std::string>>();
      m.config = j.value("config", nlohmann::json::object());
      for (const auto& f : j.at("inputs")) m.inputs.push_back({f.at("path"), f.at("hash")});
      for (const auto& f : j.at("outputs")) m.outputs.push_back({f.at("path"), f.at("hash")});
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("malformed manifest: ") + e.what());
    }
    return m;
  }

  void write(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path);
    out << to_json().dump(2) << "\n";
  }

  static Manifest read(const std::string& path) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(path + ": " + e.what());
    }
    return from_json(j);
  }
};

}  // namespace esb
