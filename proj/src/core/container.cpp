#include "core/container.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "core/error.hpp"

namespace stainkit::container {

namespace {

using nlohmann::json;

constexpr char kMagic[7] = "MSGAN1";

}  // namespace

void write(const std::string& path, const json& extra_header,
           const std::map<std::string, const Tensor*>& tensors) {
  json header = extra_header;
  json directory = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : tensors) {
    directory.push_back(json{{"name", name}, {"shape", tensor->shape()}, {"offset", offset}});
    offset += tensor->size() * sizeof(float);
  }
  header["tensors"] = std::move(directory);
  std::string head = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorCode::Io, "cannot open for writing: " + path);
  f.write(kMagic, 6);
  unsigned char len_bytes[8];
  std::uint64_t hlen = head.size();
  for (int k = 0; k < 8; ++k) len_bytes[k] = static_cast<unsigned char>((hlen >> (8 * k)) & 0xff);
  f.write(reinterpret_cast<const char*>(len_bytes), 8);
  f.write(head.data(), static_cast<std::streamsize>(head.size()));
  std::vector<float> buf;
  for (const auto& [name, tensor] : tensors) {
    buf.resize(tensor->size());
    for (std::size_t i = 0; i < tensor->size(); ++i) buf[i] = static_cast<float>((*tensor)[i]);
    f.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!f) fail(ErrorCode::Io, "write failed: " + path);
}

json read(const std::string& path, std::map<std::string, Tensor>& out_tensors) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::Io, "cannot open: " + path);
  char magic[6];
  f.read(magic, 6);
  if (!f || std::memcmp(magic, kMagic, 6) != 0) {
    fail(ErrorCode::BadFormat, "missing MSGAN1 magic: " + path);
  }
  unsigned char len_bytes[8];
  f.read(reinterpret_cast<char*>(len_bytes), 8);
  if (!f) fail(ErrorCode::BadFormat, "truncated header length: " + path);
  std::uint64_t hlen = 0;
  for (int k = 0; k < 8; ++k) hlen |= static_cast<std::uint64_t>(len_bytes[k]) << (8 * k);
  std::string head(hlen, '\0');
  f.read(head.data(), static_cast<std::streamsize>(hlen));
  if (!f) fail(ErrorCode::BadFormat, "truncated header: " + path);
  json header = json::parse(head, nullptr, false);
  if (header.is_discarded()) fail(ErrorCode::BadFormat, "header is not valid JSON: " + path);

  std::uint64_t data_start = 6 + 8 + hlen;
  std::vector<float> buf;
  if (!header.contains("tensors") || !header["tensors"].is_array()) {
    fail(ErrorCode::BadFormat, "header lacks a tensor directory: " + path);
  }
  for (const auto& entry : header["tensors"]) {
    std::string name;
    std::vector<int> shape;
    std::uint64_t offset = 0;
    try {
      name = entry.at("name").get<std::string>();
      shape = entry.at("shape").get<std::vector<int>>();
      offset = entry.at("offset").get<std::uint64_t>();
    } catch (const json::exception& e) {
      fail(ErrorCode::BadFormat, std::string("tensor directory entry: ") + e.what());
    }
    for (int d : shape) {
      if (d < 1) fail(ErrorCode::BadFormat, "non-positive dimension for tensor: " + name);
    }
    Tensor t(shape);
    buf.resize(t.size());
    f.seekg(static_cast<std::streamoff>(data_start + offset));
    f.read(reinterpret_cast<char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!f) fail(ErrorCode::BadFormat, "truncated tensor data for: " + name);
    for (std::size_t i = 0; i < buf.size(); ++i) t[i] = static_cast<double>(buf[i]);
    out_tensors.emplace(std::move(name), std::move(t));
  }
  return header;
}

}  // namespace stainkit::container
