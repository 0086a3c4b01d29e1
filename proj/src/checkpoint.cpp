#include "medvl/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "medvl/config_io.hpp"
#include "medvl/errors.hpp"

namespace medvl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;
constexpr char kOptimizerMagic[8] = {'M', 'V', 'L', 'A', 'D', 'A', 'M', '1'};

std::string read_text(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw CorruptionError("missing checkpoint file " + file.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + file.string());
  out << text;
  if (!out) throw ConfigError("write failed: " + file.string());
}

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const fs::path& file) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw CorruptionError("truncated " + file.string());
  return v;
}

void put_matrix(std::ostream& os, const Matrix& m) {
  os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

void get_matrix(std::istream& is, Matrix& m, const fs::path& file) {
  if (!is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)))) {
    throw CorruptionError("truncated " + file.string());
  }
}

struct ManifestEntry {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::uint64_t offset = 0;
  std::uint64_t nbytes = 0;
};

std::vector<ManifestEntry> parse_weight_manifest(const fs::path& file) {
  std::istringstream in(read_text(file));
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestEntry e;
    std::string dtype, shape;
    char x = 0;
    if (!(ls >> e.name >> dtype >> shape >> e.offset >> e.nbytes)) {
      throw CorruptionError("manifest line " + std::to_string(lineno) + " is malformed");
    }
    std::istringstream ss(shape);
    if (dtype != "f64" || !(ss >> e.rows >> x >> e.cols) || x != 'x' || e.rows < 0 || e.cols < 0) {
      throw CorruptionError("manifest line " + std::to_string(lineno) + " has a bad type or shape");
    }
    if (e.nbytes != static_cast<std::uint64_t>(e.rows * e.cols) * sizeof(double)) {
      throw CorruptionError("manifest size of '" + e.name + "' disagrees with its shape");
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::string shape_text(Eigen::Index r, Eigen::Index c) { return std::to_string(r) + "x" + std::to_string(c); }

json checkpoint_config(const BundleConfig& model, const TrainConfig* train, const MixConfig* mix, std::size_t step,
                       const std::string& id) {
  json j;
  j["format"] = kFormatVersion;
  j["checkpoint_id"] = id;
  j["step"] = step;
  j["model"] = model;
  if (train) j["train"] = *train;
  if (mix) j["mix"] = *mix;
  j["vocabulary"] = vocabulary_table();
  return j;
}

}  // namespace

json vocabulary_table() {
  json specials = json::array();
  for (const auto& s : vocab::kSpecials) specials.push_back({{"id", s.id}, {"name", std::string(s.name)}});
  return {{"size", vocab::kSize}, {"bytes", {0, 255}}, {"specials", specials}};
}

void write_weight_archive(const ParameterStore& store, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream bin(dir / "weights.bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw ConfigError("cannot write " + (dir / "weights.bin").string());
  std::ostringstream manifest;
  std::uint64_t offset = 0;
  for (const auto& p : store.all()) {
    const std::uint64_t nbytes = static_cast<std::uint64_t>(p->value.size()) * sizeof(double);
    manifest << p->name << " f64 " << shape_text(p->value.rows(), p->value.cols()) << ' ' << offset << ' ' << nbytes
             << '\n';
    put_matrix(bin, p->value);
    offset += nbytes;
  }
  if (!bin) throw ConfigError("write failed: " + (dir / "weights.bin").string());
  write_text(dir / "manifest.txt", manifest.str());
}

void read_weight_archive(ParameterStore& store, const fs::path& dir) {
  const auto entries = parse_weight_manifest(dir / "manifest.txt");
  const fs::path bin_path = dir / "weights.bin";
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw CorruptionError("missing checkpoint file " + bin_path.string());
  const auto file_size = fs::file_size(bin_path);

  std::map<std::string, const ManifestEntry*> by_name;
  std::uint64_t expected_offset = 0;
  for (const auto& e : entries) {
    if (!by_name.emplace(e.name, &e).second) throw CorruptionError("tensor '" + e.name + "' listed twice");
    if (e.offset != expected_offset) throw CorruptionError("tensor '" + e.name + "' has a non-contiguous offset");
    expected_offset += e.nbytes;
  }
  if (expected_offset != file_size) {
    throw CorruptionError("weights.bin holds " + std::to_string(file_size) + " bytes, manifest lists " +
                          std::to_string(expected_offset));
  }
  if (entries.size() != store.all().size()) {
    for (const auto& e : entries) {
      if (!store.find(e.name)) throw CorruptionError("archive tensor '" + e.name + "' is not part of the model");
    }
  }
  for (const auto& p : store.all()) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw CorruptionError("tensor '" + p->name + "' missing from the archive");
    const ManifestEntry& e = *it->second;
    if (e.rows != p->value.rows() || e.cols != p->value.cols()) {
      throw ShapeError("tensor '" + p->name + "' has shape " + shape_text(e.rows, e.cols) + " in the checkpoint, " +
                       shape_text(p->value.rows(), p->value.cols()) + " in the model");
    }
    bin.seekg(static_cast<std::streamoff>(e.offset));
    get_matrix(bin, p->value, bin_path);
  }
}

void write_optimizer_state(const AdamW& opt, const fs::path& file) {
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("cannot write " + file.string());
  os.write(kOptimizerMagic, sizeof kOptimizerMagic);
  put<std::uint64_t>(os, opt.step_count());
  put<std::uint64_t>(os, opt.slots().size());
  for (const auto& s : opt.slots()) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(s.param->name.size()));
    os.write(s.param->name.data(), static_cast<std::streamsize>(s.param->name.size()));
    put<std::int64_t>(os, s.m.rows());
    put<std::int64_t>(os, s.m.cols());
    put_matrix(os, s.m);
    put_matrix(os, s.v);
  }
  if (!os) throw ConfigError("write failed: " + file.string());
}

void read_optimizer_state(AdamW& opt, const fs::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw CorruptionError("missing checkpoint file " + file.string());
  char magic[sizeof kOptimizerMagic];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kOptimizerMagic, sizeof magic) != 0) {
    throw CorruptionError(file.string() + " is not an optimizer state file");
  }
  const auto t = get<std::uint64_t>(is, file);
  const auto n = get<std::uint64_t>(is, file);
  if (n != opt.slots().size()) {
    throw CorruptionError("optimizer state has " + std::to_string(n) + " slots, model has " +
                          std::to_string(opt.slots().size()) + " trainable tensors");
  }
  for (auto& s : opt.slots()) {
    const auto len = get<std::uint32_t>(is, file);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw CorruptionError("truncated " + file.string());
    if (name != s.param->name) throw CorruptionError("optimizer slot '" + name + "' where '" + s.param->name + "' expected");
    const auto rows = get<std::int64_t>(is, file);
    const auto cols = get<std::int64_t>(is, file);
    if (rows != s.m.rows() || cols != s.m.cols()) {
      throw ShapeError("optimizer slot '" + name + "' has shape " + shape_text(rows, cols));
    }
    get_matrix(is, s.m, file);
    get_matrix(is, s.v, file);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw CorruptionError("trailing bytes in " + file.string());
  opt.set_step_count(t);
}

std::string make_checkpoint_id(std::size_t step, const ParameterStore& store) {
  std::ostringstream os;
  os << "step" << step << '-' << std::hex << std::setw(16) << std::setfill('0') << store.checksum();
  return os.str();
}

CheckpointInfo read_checkpoint_info(const fs::path& dir) {
  json j;
  try {
    j = json::parse(read_text(dir / "config.json"));
  } catch (const json::parse_error& e) {
    throw CorruptionError("config.json: " + std::string(e.what()));
  }
  if (j.value("format", 0) != kFormatVersion) throw CorruptionError("unsupported checkpoint format");
  if (j.value("vocabulary", json()) != vocabulary_table()) {
    throw CorruptionError("checkpoint vocabulary differs from this build's vocabulary");
  }
  CheckpointInfo info;
  try {
    info.model = j.at("model").get<BundleConfig>();
    if (j.contains("train")) info.train = j["train"].get<TrainConfig>();
    if (j.contains("mix")) info.mix = j["mix"].get<MixConfig>();
    info.step = j.value("step", std::size_t{0});
    info.checkpoint_id = j.value("checkpoint_id", std::string());
  } catch (const json::exception& e) {
    throw CorruptionError("config.json: " + std::string(e.what()));
  }
  return info;
}

LoadedModel load_model(const fs::path& dir) {
  LoadedModel out;
  out.info = read_checkpoint_info(dir);
  out.bundle = std::make_unique<ModelBundle>(out.info.model);
  read_weight_archive(out.bundle->store(), dir);
  return out;
}

void save_model(const ModelBundle& bundle, const fs::path& dir) {
  write_weight_archive(bundle.store(), dir);
  const auto id = make_checkpoint_id(0, bundle.store());
  write_text(dir / "config.json", checkpoint_config(bundle.config(), nullptr, nullptr, 0, id).dump(2) + "\n");
}

void Trainer::save(const fs::path& dir) const {
  write_weight_archive(bundle_->store(), dir);
  write_optimizer_state(*optimizer_, dir / "optimizer.bin");
  write_text(dir / "rng.txt", stream_->save_state());
  const auto id = make_checkpoint_id(step_, bundle_->store());
  write_text(dir / "config.json",
             checkpoint_config(bundle_->config(), &train_, &stream_->config(), step_, id).dump(2) + "\n");
}

Trainer Trainer::resume(const fs::path& dir, std::map<TaskIdentifier, std::vector<TrainingSample>> streams) {
  auto loaded = load_model(dir);
  Trainer t(std::move(loaded.bundle), loaded.info.train, std::move(streams), loaded.info.mix);
  read_optimizer_state(*t.optimizer_, dir / "optimizer.bin");
  t.stream_->load_state(read_text(dir / "rng.txt"));
  t.step_ = loaded.info.step;
  return t;
}

}  // namespace medvl
