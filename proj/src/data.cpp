#include "metalic/data.hpp"

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "metalic/log.hpp"

namespace metalic {

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

double parse_real(const std::string& text, const std::string& where) {
  const std::string t = trim(text);
  if (t.empty()) throw ParseError(where + ": empty numeric field");
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size() || errno == ERANGE || !std::isfinite(v)) {
    throw ParseError(where + ": cannot parse '" + t + "' as a finite real");
  }
  return v;
}

long long parse_integer(const std::string& text, const std::string& where) {
  const std::string t = trim(text);
  errno = 0;
  char* end = nullptr;
  const long long v = std::strtoll(t.c_str(), &end, 10);
  if (t.empty() || end != t.c_str() + t.size() || errno == ERANGE) {
    throw FormatError(where + ": cannot parse '" + t + "' as an integer");
  }
  return v;
}

}  // namespace

FitnessTask load_task_csv(const fs::path& path, const Alphabet& alphabet) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot open task file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": missing header row");
  const auto header = split(trim(line), ',');
  int col_seq = -1, col_fit = -1, col_aux = -1, col_mut = -1;
  for (int i = 0; i < static_cast<int>(header.size()); ++i) {
    const auto name = trim(header[static_cast<std::size_t>(i)]);
    if (name == "sequence") col_seq = i;
    else if (name == "fitness") col_fit = i;
    else if (name == "aux_score") col_aux = i;
    else if (name == "mutant") col_mut = i;
  }
  if (col_seq < 0) throw ParseError(path.string() + ": header lacks a 'sequence' column");
  if (col_fit < 0) throw ParseError(path.string() + ": header lacks a 'fitness' column");

  FitnessTask task;
  task.name = path.stem().string();
  task.alphabet = alphabet;
  bool any_multi = false;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (fields.size() != header.size()) {
      throw ParseError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                       std::to_string(fields.size()));
    }
    Record r;
    r.sequence = trim(fields[static_cast<std::size_t>(col_seq)]);
    if (r.sequence.empty()) throw ParseError(where + ": empty sequence");
    for (char c : r.sequence) {
      if (!alphabet.contains(c)) throw ParseError(where + ": symbol '" + std::string(1, c) + "' not in alphabet");
    }
    r.fitness = parse_real(fields[static_cast<std::size_t>(col_fit)], where);
    if (col_aux >= 0) r.aux_score = parse_real(fields[static_cast<std::size_t>(col_aux)], where);
    if (col_mut >= 0) {
      r.mutant = trim(fields[static_cast<std::size_t>(col_mut)]);
      if (r.mutant.find(':') != std::string::npos) any_multi = true;
      if (r.mutant.empty()) task.wild_type = r.sequence;
    }
    if (!seen.insert(r.sequence).second) throw DuplicateSequence(where + ": duplicate sequence " + r.sequence);
    task.records.push_back(std::move(r));
  }
  task.family = col_mut < 0 ? FamilyTag::synthetic : (any_multi ? FamilyTag::multi_mutant : FamilyTag::single_mutant);
  return standardize_task(task);
}

void write_task_csv(const FitnessTask& task, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IOError("cannot write " + path.string());
  const bool aux = task.has_aux();
  const bool mutant = std::any_of(task.records.begin(), task.records.end(), [](const Record& r) { return !r.mutant.empty(); });
  out << "sequence,fitness";
  if (aux) out << ",aux_score";
  if (mutant) out << ",mutant";
  out << '\n';
  char buf[64];
  for (const auto& r : task.records) {
    std::snprintf(buf, sizeof buf, "%.17g", r.fitness);
    out << r.sequence << ',' << buf;
    if (aux) {
      std::snprintf(buf, sizeof buf, "%.17g", *r.aux_score);
      out << ',' << buf;
    }
    if (mutant) out << ',' << r.mutant;
    out << '\n';
  }
  if (!out) throw IOError("failed writing " + path.string());
}

void TaskRegistry::add(FitnessTask task, std::string source) {
  if (contains(task.name)) throw InvalidSpec("duplicate task name '" + task.name + "' in registry");
  index_[task.name] = tasks_.size();
  provenance_[task.name] = std::move(source);
  tasks_.push_back(std::move(task));
}

const FitnessTask& TaskRegistry::at(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw UnknownTask("task '" + name + "' not in registry");
  return tasks_[it->second];
}

bool TaskRegistry::operator==(const TaskRegistry& other) const {
  if (tasks_.size() != other.tasks_.size()) return false;
  for (std::size_t i = 0; i < tasks_.size(); ++i) {
    const auto& a = tasks_[i];
    const auto& b = other.tasks_[i];
    if (a.name != b.name || a.records.size() != b.records.size() || a.wild_type != b.wild_type) return false;
    for (std::size_t j = 0; j < a.records.size(); ++j) {
      const auto& ra = a.records[j];
      const auto& rb = b.records[j];
      if (ra.sequence != rb.sequence || ra.fitness != rb.fitness || ra.aux_score != rb.aux_score) return false;
    }
  }
  return true;
}

TaskRegistry load_registry(const fs::path& directory, const Alphabet& alphabet) {
  if (!fs::is_directory(directory)) throw IOError("not a directory: " + directory.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(directory)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  TaskRegistry registry;
  for (const auto& f : files) registry.add(load_task_csv(f, alphabet), f.string());
  return registry;
}

TaskRegistry filter_by_length(const TaskRegistry& registry, int max_len) {
  TaskRegistry out;
  for (const auto& task : registry.tasks()) {
    if (static_cast<int>(task.max_length()) > max_len || max_len <= 0) {
      log::info("filter_by_length: dropping task '", task.name, "' (longest sequence ", task.max_length(), " > ",
                max_len, ")");
      continue;
    }
    out.add(task, registry.provenance(task.name));
  }
  return out;
}

const MatF& EmbeddingTable::at(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw MissingEmbedding("no embedding for sequence " + key);
  return it->second;
}

void EmbeddingTable::insert(const std::string& key, MatF matrix) {
  if (dim_ <= 0) dim_ = static_cast<int>(matrix.cols());
  if (matrix.cols() != dim_) {
    throw ShapeMismatch("embedding for " + key + " has D_in " + std::to_string(matrix.cols()) + ", table has " +
                        std::to_string(dim_));
  }
  if (matrix.rows() != static_cast<Eigen::Index>(key.size())) {
    throw ShapeMismatch("embedding for " + key + " has " + std::to_string(matrix.rows()) + " rows, sequence length is " +
                        std::to_string(key.size()));
  }
  if (!entries_.count(key)) order_.push_back(key);
  entries_[key] = std::move(matrix);
}

namespace {

std::pair<fs::path, fs::path> container_paths(const fs::path& path) {
  fs::path stem = path;
  if (stem.extension() == ".manifest" || stem.extension() == ".bin") stem.replace_extension();
  fs::path manifest = stem, bin = stem;
  manifest += ".manifest";
  bin += ".bin";
  return {manifest, bin};
}

void to_little_endian(float* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t u;
      std::memcpy(&u, data + i, 4);
      u = __builtin_bswap32(u);
      std::memcpy(data + i, &u, 4);
    }
  } else {
    (void)data;
    (void)n;
  }
}

}  // namespace

EmbeddingTable load_embedding_table(const fs::path& path) {
  const auto [manifest_path, bin_path] = container_paths(path);
  std::ifstream manifest(manifest_path);
  if (!manifest) throw FormatError("cannot open embedding manifest " + manifest_path.string());
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw FormatError("cannot open embedding payload " + bin_path.string());
  bin.seekg(0, std::ios::end);
  const auto payload_size = static_cast<std::uint64_t>(bin.tellg());

  EmbeddingTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split(line, '\t');
    const std::string where = manifest_path.string() + ":" + std::to_string(line_no);
    if (fields.size() != 4) throw FormatError(where + ": expected 4 tab-separated fields");
    const std::string& key = fields[0];
    const auto offset = parse_integer(fields[1], where);
    const auto rows = parse_integer(fields[2], where);
    const auto cols = parse_integer(fields[3], where);
    if (offset < 0 || rows <= 0 || cols <= 0) throw FormatError(where + ": negative or zero shape/offset");
    if (offset % 4 != 0) throw FormatError(where + ": offset not aligned to float32");
    const auto bytes = static_cast<std::uint64_t>(rows) * static_cast<std::uint64_t>(cols) * 4u;
    if (static_cast<std::uint64_t>(offset) + bytes > payload_size) throw FormatError(where + ": entry exceeds payload");
    if (table.dim() > 0 && cols != table.dim()) {
      throw FormatError(where + ": D_in " + std::to_string(cols) + " differs from " + std::to_string(table.dim()));
    }
    if (rows != static_cast<long long>(key.size())) {
      throw ShapeMismatch(where + ": " + std::to_string(rows) + " rows for key of length " + std::to_string(key.size()));
    }
    MatF m(rows, cols);
    bin.seekg(offset);
    bin.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(bytes));
    if (!bin) throw FormatError(where + ": short read");
    to_little_endian(m.data(), static_cast<std::size_t>(m.size()));
    if (!m.allFinite()) throw FormatError(where + ": non-finite values");
    table.insert(key, std::move(m));
  }
  if (table.size() == 0) throw FormatError(manifest_path.string() + ": empty manifest");
  return table;
}

void write_embedding_table(const EmbeddingTable& table, const fs::path& path) {
  const auto [manifest_path, bin_path] = container_paths(path);
  std::ofstream manifest(manifest_path);
  std::ofstream bin(bin_path, std::ios::binary);
  if (!manifest || !bin) throw IOError("cannot write embedding container at " + path.string());
  std::uint64_t offset = 0;
  for (const auto& key : table.keys()) {
    MatF m = table.at(key);
    to_little_endian(m.data(), static_cast<std::size_t>(m.size()));
    manifest << key << '\t' << offset << '\t' << m.rows() << '\t' << m.cols() << '\n';
    const auto bytes = static_cast<std::uint64_t>(m.size()) * 4u;
    bin.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(bytes));
    offset += bytes;
  }
  if (!manifest || !bin) throw IOError("failed writing embedding container at " + path.string());
}

}  // namespace metalic
