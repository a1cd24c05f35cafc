#include "egdp/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "egdp/error.hpp"

namespace egdp {

namespace {

constexpr char kMagic[4] = {'E', 'G', 'D', 'P'};
constexpr std::size_t kPrefixBytes = 4 + 4 + 8;

void put_u64(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(const std::string& in, std::size_t pos, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

}  // namespace

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw LoadError("checkpoint: no tensor named '" + name + "'", 0);
}

bool Checkpoint::has_tensor(const std::string& name) const {
  for (const auto& entry : tensors) {
    if (entry.first == name) return true;
  }
  return false;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
    os.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    os.flush();
    if (!os) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json table = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    const std::uint64_t bytes = t.size() * sizeof(double);
    table.push_back({{"name", name}, {"shape", t.shape()}, {"dtype", "f64"}, {"offset", offset}, {"bytes", bytes}});
    offset += bytes;
  }
  const nlohmann::json header = {{"tensors", table}, {"meta", ckpt.meta}};
  const std::string header_text = header.dump();

  std::string out;
  out.reserve(kPrefixBytes + header_text.size() + offset);
  out.append(kMagic, 4);
  put_u64(out, kCheckpointVersion, 4);
  put_u64(out, header_text.size(), 8);
  out += header_text;
  for (const auto& entry : ckpt.tensors) {
    for (double x : entry.second.data()) {
      std::uint64_t bits;
      std::memcpy(&bits, &x, sizeof bits);
      put_u64(out, bits, 8);
    }
  }
  write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  const std::string raw((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const std::string where = "checkpoint " + path.string();

  if (raw.size() < 4 || std::memcmp(raw.data(), kMagic, 4) != 0) throw LoadError(where + ": bad magic", 0);
  if (raw.size() < kPrefixBytes) throw LoadError(where + ": truncated prefix", raw.size());
  const auto version = static_cast<std::uint32_t>(get_u64(raw, 4, 4));
  if (version != kCheckpointVersion) {
    throw VersionError(where + ": format version " + std::to_string(version) + ", expected " +
                           std::to_string(kCheckpointVersion),
                       4);
  }
  const std::uint64_t header_len = get_u64(raw, 8, 8);
  if (header_len > raw.size() - kPrefixBytes) throw LoadError(where + ": header extends past end of file", raw.size());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(raw.begin() + kPrefixBytes,
                                   raw.begin() + static_cast<std::ptrdiff_t>(kPrefixBytes + header_len));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(where + ": unreadable header (" + e.what() + ")", kPrefixBytes);
  }
  if (!header.contains("tensors") || !header["tensors"].is_array()) {
    throw LoadError(where + ": header has no tensor table", kPrefixBytes);
  }

  const std::size_t payload_start = kPrefixBytes + header_len;
  std::uint64_t expected = 0;
  try {
    for (const auto& entry : header["tensors"]) {
      if (entry.at("dtype").get<std::string>() != "f64") throw LoadError(where + ": unsupported dtype", kPrefixBytes);
      std::uint64_t n = 1;
      for (auto d : entry.at("shape").get<std::vector<std::size_t>>()) n *= d;
      if (entry.at("bytes").get<std::uint64_t>() != n * sizeof(double)) {
        throw LoadError(where + ": tensor '" + entry.at("name").get<std::string>() + "' size disagrees with its shape",
                        kPrefixBytes);
      }
      expected += n * sizeof(double);
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(where + ": malformed tensor table (" + e.what() + ")", kPrefixBytes);
  }
  const std::uint64_t actual = raw.size() - payload_start;
  if (actual != expected) {
    throw LoadError(where + ": payload is " + std::to_string(actual) + " bytes, header promises " +
                        std::to_string(expected),
                    payload_start + std::min(actual, expected));
  }

  Checkpoint ckpt;
  ckpt.meta = header.value("meta", nlohmann::json::object());
  std::size_t pos = payload_start;
  for (const auto& entry : header["tensors"]) {
    auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    Tensor t(shape, 0.0);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const std::uint64_t bits = get_u64(raw, pos, 8);
      std::memcpy(&t[i], &bits, sizeof bits);
      pos += 8;
    }
    ckpt.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  return ckpt;
}

}  // namespace egdp
