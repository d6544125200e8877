#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "consis/error.hpp"

namespace consis {

// Shared on-disk layout for checkpoints, datasets and activation stores:
// 8-byte magic, little-endian u64 header length, JSON header, raw blobs.
// Blob order and byte counts are fixed by the header contents.
class ContainerWriter {
 public:
  ContainerWriter(const std::string& path, const char magic[8]) : out_(path, std::ios::binary) {
    require(out_.good(), ErrorCode::io_error, "cannot write " + path);
    out_.write(magic, 8);
  }

  void write_header(const nlohmann::json& header) {
    const std::string text = header.dump();
    const std::uint64_t n = text.size();
    out_.write(reinterpret_cast<const char*>(&n), sizeof(n));
    out_.write(text.data(), static_cast<std::streamsize>(text.size()));
  }

  void write_blob(const void* data, std::size_t bytes) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  }

  template <typename T>
  void write_vector(const std::vector<T>& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    write_blob(v.data(), v.size() * sizeof(T));
  }

  void close() {
    out_.flush();
    require(out_.good(), ErrorCode::io_error, "short write");
    out_.close();
  }

 private:
  std::ofstream out_;
};

class ContainerReader {
 public:
  ContainerReader(const std::string& path, const char magic[8], ErrorCode on_corrupt)
      : in_(path, std::ios::binary), on_corrupt_(on_corrupt), path_(path) {
    require(in_.good(), ErrorCode::io_error, "cannot open " + path);
    char got[8] = {};
    in_.read(got, 8);
    if (in_.gcount() != 8 || std::memcmp(got, magic, 8) != 0)
      raise(on_corrupt_, "bad magic in " + path);
    std::uint64_t n = 0;
    in_.read(reinterpret_cast<char*>(&n), sizeof(n));
    if (in_.gcount() != sizeof(n) || n > (1ull << 32))
      raise(on_corrupt_, "bad header length in " + path);
    std::string text(n, '\0');
    in_.read(text.data(), static_cast<std::streamsize>(n));
    if (static_cast<std::uint64_t>(in_.gcount()) != n)
      raise(on_corrupt_, "truncated header in " + path);
    try {
      header_ = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      raise(on_corrupt_, std::string("header parse: ") + e.what());
    }
  }

  const nlohmann::json& header() const { return header_; }

  void read_blob(void* data, std::size_t bytes) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(bytes));
    if (static_cast<std::size_t>(in_.gcount()) != bytes)
      raise(on_corrupt_, "truncated data in " + path_);
  }

  template <typename T>
  void read_vector(std::vector<T>& v, std::size_t count) {
    static_assert(std::is_trivially_copyable_v<T>);
    v.resize(count);
    read_blob(v.data(), count * sizeof(T));
  }

 private:
  std::ifstream in_;
  nlohmann::json header_;
  ErrorCode on_corrupt_;
  std::string path_;
};

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::io_error, "cannot write " + path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.flush();
  require(out.good(), ErrorCode::io_error, "short write to " + path);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::io_error, "cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return text;
}

}  // namespace consis
