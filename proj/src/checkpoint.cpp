#include "spiro/checkpoint.hpp"

#include <cstring>

#include "spiro/errors.hpp"
#include "spiro/io.hpp"

namespace spiro::ckpt {

using nlohmann::json;

const tc::Tensor& Container::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  fail(ErrorKind::data, "checkpoint has no tensor named '" + name + "'");
}

bool Container::has_tensor(const std::string& name) const {
  for (const auto& entry : tensors) {
    if (entry.first == name) return true;
  }
  return false;
}

std::string serialize(const Container& c, DType dtype) {
  std::string payload;
  json entries = json::array();
  for (const auto& [name, t] : c.tensors) {
    const std::size_t offset = payload.size();
    for (double v : t.storage()) {
      if (dtype == DType::f64) {
        io::put_f64(payload, v);
      } else {
        io::put_f32(payload, static_cast<float>(v));
      }
    }
    entries.push_back({{"name", name},
                       {"shape", t.shape()},
                       {"dtype", dtype == DType::f64 ? "f64" : "f32"},
                       {"offset", offset},
                       {"nbytes", payload.size() - offset}});
  }
  json sections = json::array();
  for (const auto& [name, text] : c.sections) {
    sections.push_back({{"name", name}, {"offset", payload.size()}, {"nbytes", text.size()}});
    payload += text;
  }
  const json manifest{{"format", "SPFM"},
                      {"version", kVersion},
                      {"meta", c.meta},
                      {"tensors", entries},
                      {"sections", sections},
                      {"payload_bytes", payload.size()},
                      {"payload_fnv1a64", io::hex64(io::fnv1a64(payload))}};
  const std::string manifest_text = manifest.dump();
  std::string out(kMagic, sizeof kMagic);
  io::put_u32(out, kVersion);
  io::put_u64(out, manifest_text.size());
  out += manifest_text;
  out += payload;
  return out;
}

Container deserialize(std::string_view bytes) {
  require(bytes.size() >= 16, ErrorKind::integrity,
          "checkpoint truncated in header at offset " + std::to_string(bytes.size()));
  require(std::memcmp(bytes.data(), kMagic, 4) == 0, ErrorKind::integrity,
          "bad checkpoint magic at offset 0");
  const std::uint32_t version = io::get_u32(bytes, 4);
  require(version == kVersion, ErrorKind::integrity,
          "unsupported checkpoint version " + std::to_string(version) + " (expected " +
              std::to_string(kVersion) + ")");
  const std::uint64_t manifest_len = io::get_u64(bytes, 8);
  const std::size_t payload_start = 16 + manifest_len;
  require(manifest_len <= bytes.size() && payload_start <= bytes.size(), ErrorKind::integrity,
          "checkpoint truncated inside manifest: need " + std::to_string(payload_start) +
              " bytes, file ends at offset " + std::to_string(bytes.size()));
  json manifest;
  try {
    manifest = json::parse(bytes.substr(16, manifest_len));
  } catch (const json::exception& e) {
    fail(ErrorKind::integrity, std::string("checkpoint manifest at offset 16 is corrupt: ") +
                                   e.what());
  }
  const std::string_view payload = bytes.substr(payload_start);
  Container c;
  try {
    const std::size_t expected = manifest.at("payload_bytes").get<std::size_t>();
    require(payload.size() >= expected, ErrorKind::integrity,
            "checkpoint truncated: payload ends at offset " + std::to_string(bytes.size()) +
                ", expected " + std::to_string(payload_start + expected));
    require(payload.size() == expected, ErrorKind::integrity,
            "checkpoint has " + std::to_string(payload.size() - expected) +
                " trailing bytes after offset " + std::to_string(payload_start + expected));
    const std::string checksum = io::hex64(io::fnv1a64(payload));
    require(checksum == manifest.at("payload_fnv1a64").get<std::string>(), ErrorKind::integrity,
            "checkpoint payload checksum mismatch (payload starts at offset " +
                std::to_string(payload_start) + ")");
    c.meta = manifest.value("meta", json::object());
    for (const json& e : manifest.at("tensors")) {
      const std::string name = e.at("name").get<std::string>();
      const tc::Shape shape = e.at("shape").get<tc::Shape>();
      const std::string dtype = e.at("dtype").get<std::string>();
      const std::size_t offset = e.at("offset").get<std::size_t>();
      const std::size_t nbytes = e.at("nbytes").get<std::size_t>();
      const std::size_t width = dtype == "f64" ? 8 : dtype == "f32" ? 4 : 0;
      require(width != 0, ErrorKind::integrity, "tensor '" + name + "' has unknown dtype " + dtype);
      const std::size_t count = tc::shape_size(shape);
      require(nbytes == count * width && offset + nbytes <= payload.size(), ErrorKind::integrity,
              "tensor '" + name + "' at payload offset " + std::to_string(offset) +
                  " does not fit its declared shape");
      std::vector<double> data(count);
      for (std::size_t i = 0; i < count; ++i) {
        data[i] = width == 8 ? io::get_f64(payload, offset + 8 * i)
                             : static_cast<double>(io::get_f32(payload, offset + 4 * i));
      }
      c.tensors.emplace_back(name, tc::Tensor(shape, std::move(data)));
    }
    for (const json& s : manifest.at("sections")) {
      const std::size_t offset = s.at("offset").get<std::size_t>();
      const std::size_t nbytes = s.at("nbytes").get<std::size_t>();
      require(offset + nbytes <= payload.size(), ErrorKind::integrity,
              "section overruns payload at offset " + std::to_string(offset));
      c.sections[s.at("name").get<std::string>()] = std::string(payload.substr(offset, nbytes));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::integrity, std::string("checkpoint manifest is malformed: ") + e.what());
  }
  return c;
}

void save(const std::string& path, const Container& c, DType dtype) {
  io::atomic_write(path, serialize(c, dtype));
}

Container load(const std::string& path) { return deserialize(io::read_file(path)); }

}  // namespace spiro::ckpt
