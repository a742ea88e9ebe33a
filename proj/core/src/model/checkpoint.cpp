#include "bitref/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "bitref/errors.hpp"

namespace bitref {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little endian");

namespace {

constexpr char kMagic[4] = {'B', 'T', 'X', 'E'};

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v;
  std::memcpy(&v, in.data() + at, 4);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const EditorModel& model,
                     std::size_t epoch, double dev_ppl) {
  nlohmann::ordered_json header;
  header["config"] = nlohmann::ordered_json::parse(to_json(model.config()));
  header["epoch"] = epoch;
  header["dev_ppl"] = dev_ppl;
  auto& merges = header["codec"]["merges"] = nlohmann::ordered_json::array();
  for (const auto& [l, r] : model.codec().bpe().merges()) merges.push_back({l, r});
  header["codec"]["tokens"] = model.codec().vocab().tokens();
  auto& tensors = header["tensors"] = nlohmann::ordered_json::array();
  for (const auto& t : model.net().layout().tensors()) {
    tensors.push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}, {"byte_offset", t.offset * 4}});
  }
  const std::string json = header.dump();

  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(json.size()));
  out += json;
  const auto& p = model.net().params();
  out.append(reinterpret_cast<const char*>(p.data()), p.size() * sizeof(float));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(Errc::IoError, "cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) fail(Errc::IoError, "write failed: " + path.string());
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  save_checkpoint(path, ckpt.model, ckpt.epoch, ckpt.dev_ppl);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(Errc::MissingArtifact, "checkpoint not found: " + path.string() + " (run `train`)");
  const std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (in.size() < 4 || std::memcmp(in.data(), kMagic, 4) != 0) {
    fail(Errc::BadMagic, path.string() + " is not a checkpoint");
  }
  if (in.size() < 12) fail(Errc::ManifestMismatch, "truncated checkpoint header");
  const std::uint32_t version = get_u32(in, 4);
  if (version != kCheckpointVersion) {
    fail(Errc::VersionMismatch, "checkpoint version " + std::to_string(version) + ", expected " +
                                    std::to_string(kCheckpointVersion));
  }
  const std::size_t header_len = get_u32(in, 8);
  if (in.size() < 12 + header_len) fail(Errc::ManifestMismatch, "truncated checkpoint header");

  try {
    const auto header = nlohmann::json::parse(in.substr(12, header_len));
    ModelConfig cfg = model_config_from_json(header.at("config").dump());
    std::vector<BpeModel::Merge> merges;
    for (const auto& m : header.at("codec").at("merges")) merges.emplace_back(m.at(0), m.at(1));
    Vocab vocab = Vocab::from_tokens(header.at("codec").at("tokens").get<std::vector<std::string>>());
    EditorModel model(cfg, SubwordCodec(BpeModel(std::move(merges)), std::move(vocab)));

    const auto& layout = model.net().layout().tensors();
    const auto& listed = header.at("tensors");
    if (listed.size() != layout.size()) fail(Errc::ManifestMismatch, "tensor count differs");
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const auto& t = listed[i];
      if (t.at("name") != layout[i].name || t.at("shape").at(0) != layout[i].rows ||
          t.at("shape").at(1) != layout[i].cols || t.at("byte_offset") != layout[i].offset * 4) {
        fail(Errc::ManifestMismatch, "tensor manifest differs at " + layout[i].name);
      }
    }
    auto& p = model.net().params();
    const std::size_t bytes = p.size() * sizeof(float);
    if (in.size() != 12 + header_len + bytes) {
      fail(Errc::ManifestMismatch, "tensor data is " + std::to_string(in.size() - 12 - header_len) +
                                       " bytes, manifest needs " + std::to_string(bytes));
    }
    std::memcpy(p.data(), in.data() + 12 + header_len, bytes);
    return Checkpoint{std::move(model), header.at("epoch").get<std::size_t>(),
                      header.at("dev_ppl").is_null() ? 0.0 : header.at("dev_ppl").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::ManifestMismatch, std::string("checkpoint header: ") + e.what());
  }
}

}  // namespace bitref
