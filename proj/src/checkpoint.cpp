#include "metalic/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace metalic {

namespace fs = std::filesystem;

namespace {

constexpr const char* kGroups[] = {"param", "adam.m", "adam.v"};

void write_floats(std::ofstream& out, std::span<const float> values) {
  std::vector<std::uint32_t> raw(values.size());
  std::memcpy(raw.data(), values.data(), values.size() * sizeof(float));
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& r : raw) r = __builtin_bswap32(r);
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IOError("cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IOError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  const auto& st = ckpt.state;
  const auto& layout = st.params.layout();
  const ParamSet<float>* sets[] = {&st.params, &st.optimizer.first_moment(), &st.optimizer.second_moment()};

  // Write into temporaries and rename so a crash never leaves a torn checkpoint.
  const fs::path manifest_tmp = dir / "manifest.tsv.tmp";
  const fs::path payload_tmp = dir / "payload.bin.tmp";
  {
    std::ofstream manifest(manifest_tmp);
    std::ofstream payload(payload_tmp, std::ios::binary);
    if (!manifest || !payload) throw IOError("cannot write checkpoint files in " + dir.string());
    manifest << "# metalic checkpoint v" << Checkpoint::kFormatVersion << "\n";
    std::size_t offset = 0;
    for (int g = 0; g < 3; ++g) {
      if (sets[g]->size() != st.params.size()) continue;  // optimizer never initialized
      for (TensorId id = 0; id < layout.tensors().size(); ++id) {
        const auto& spec = layout.spec(id);
        manifest << kGroups[g] << '\t' << spec.name << '\t' << spec.rows << '\t' << spec.cols << "\tfloat32\t"
                 << offset << '\n';
        write_floats(payload, sets[g]->tensor(id));
        offset += spec.size() * 4;
      }
    }
    if (!manifest || !payload) throw IOError("failed writing checkpoint in " + dir.string());
  }
  write_config_file(dir / "config.cfg", ckpt.config);
  {
    std::ofstream state(dir / "state.txt");
    state << "format_version " << Checkpoint::kFormatVersion << '\n'
          << "method " << ckpt.method << '\n'
          << "step " << st.step << '\n'
          << "optimizer_step " << st.optimizer.steps_taken() << '\n'
          << "gradient_computations " << st.gradient_computations << '\n'
          << "rng " << st.rng << '\n';
    if (!state) throw IOError("failed writing checkpoint state in " + dir.string());
  }
  fs::rename(manifest_tmp, dir / "manifest.tsv");
  fs::rename(payload_tmp, dir / "payload.bin");
}

Checkpoint load_checkpoint(const fs::path& dir) {
  Checkpoint ckpt;
  const std::string manifest = read_file(dir / "manifest.tsv");
  const std::string payload = read_file(dir / "payload.bin");
  ckpt.config = read_config_file(dir / "config.cfg");

  struct Entry {
    std::string group, name;
    int rows, cols;
    std::size_t offset;
  };
  std::vector<Entry> entries;
  std::istringstream in(manifest);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line_no == 1 && line != "# metalic checkpoint v" + std::to_string(Checkpoint::kFormatVersion)) {
        throw FormatError("unsupported checkpoint version: " + line);
      }
      continue;
    }
    std::istringstream ls(line);
    Entry e;
    std::string dtype;
    if (!(ls >> e.group >> e.name >> e.rows >> e.cols >> dtype >> e.offset) || dtype != "float32" || e.rows <= 0 ||
        e.cols <= 0) {
      throw FormatError("bad manifest line " + std::to_string(line_no) + " in " + dir.string());
    }
    if (e.offset % 4 != 0 || e.offset + static_cast<std::size_t>(e.rows) * e.cols * 4 > payload.size()) {
      throw FormatError("manifest entry '" + e.name + "' points outside the payload");
    }
    entries.push_back(std::move(e));
  }

  auto layout = std::make_shared<ParamLayout>();
  for (const auto& e : entries) {
    if (e.group == "param") layout->add(e.name, e.rows, e.cols);
  }
  if (layout->tensors().empty()) throw FormatError("checkpoint has no parameters");
  ParamSet<float> params(layout);
  Adam<float> adam(params, AdamConfig{});
  ParamSet<float>* targets[] = {&params, &adam.first_moment(), &adam.second_moment()};
  for (const auto& e : entries) {
    int g = -1;
    for (int i = 0; i < 3; ++i) {
      if (e.group == kGroups[i]) g = i;
    }
    if (g < 0) throw FormatError("unknown manifest group '" + e.group + "'");
    if (!layout->contains(e.name)) throw FormatError("optimizer tensor '" + e.name + "' has no parameter");
    const TensorId id = layout->id(e.name);
    const auto& spec = layout->spec(id);
    if (spec.rows != e.rows || spec.cols != e.cols) throw FormatError("shape mismatch for '" + e.name + "'");
    auto dst = targets[g]->tensor(id);
    std::vector<std::uint32_t> raw(dst.size());
    std::memcpy(raw.data(), payload.data() + e.offset, raw.size() * 4);
    if constexpr (std::endian::native == std::endian::big) {
      for (auto& r : raw) r = __builtin_bswap32(r);
    }
    std::memcpy(dst.data(), raw.data(), raw.size() * 4);
  }

  std::istringstream state(read_file(dir / "state.txt"));
  std::string key;
  int version = -1;
  std::int64_t optimizer_step = 0;
  bool have_rng = false;
  while (state >> key) {
    if (key == "format_version") state >> version;
    else if (key == "method") state >> ckpt.method;
    else if (key == "step") state >> ckpt.state.step;
    else if (key == "optimizer_step") state >> optimizer_step;
    else if (key == "gradient_computations") state >> ckpt.state.gradient_computations;
    else if (key == "rng") have_rng = static_cast<bool>(state >> ckpt.state.rng);
    else throw FormatError("unknown checkpoint state key '" + key + "'");
    if (!state) throw FormatError("bad value for checkpoint state key '" + key + "'");
  }
  if (version != Checkpoint::kFormatVersion) throw FormatError("unsupported checkpoint format version");
  if (!have_rng) throw FormatError("checkpoint state lacks the RNG state");
  adam.set_steps_taken(optimizer_step);
  ckpt.state.params = std::move(params);
  ckpt.state.optimizer = std::move(adam);
  return ckpt;
}

}  // namespace metalic
