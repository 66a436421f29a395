#include "metalic/embed.hpp"

namespace metalic {

std::string_view to_string(ProviderKind kind) {
  switch (kind) {
    case ProviderKind::onehot: return "onehot";
    case ProviderKind::learned_table: return "learned_table";
    case ProviderKind::file_backed: return "file_backed";
  }
  return "onehot";
}

ProviderKind provider_kind_from_string(std::string_view name) {
  if (name == "onehot") return ProviderKind::onehot;
  if (name == "learned_table") return ProviderKind::learned_table;
  if (name == "file_backed") return ProviderKind::file_backed;
  throw InvalidConfig("unknown provider kind '" + std::string(name) + "'");
}

EmbeddingProvider EmbeddingProvider::onehot(Alphabet alphabet) {
  EmbeddingProvider p;
  p.kind_ = ProviderKind::onehot;
  p.dim_ = alphabet.size();
  p.alphabet_ = std::move(alphabet);
  return p;
}

EmbeddingProvider EmbeddingProvider::learned_table(Alphabet alphabet, int dim, bool freeze) {
  if (dim <= 0) throw InvalidConfig("learned_table dimension must be positive");
  EmbeddingProvider p;
  p.kind_ = ProviderKind::learned_table;
  p.dim_ = dim;
  p.alphabet_ = std::move(alphabet);
  p.freeze_ = freeze;
  return p;
}

EmbeddingProvider EmbeddingProvider::file_backed(std::shared_ptr<const EmbeddingTable> table, Alphabet alphabet) {
  if (!table || table->dim() <= 0) throw InvalidConfig("file_backed provider needs a nonempty table");
  EmbeddingProvider p;
  p.kind_ = ProviderKind::file_backed;
  p.dim_ = table->dim();
  p.alphabet_ = std::move(alphabet);
  p.table_ = std::move(table);
  return p;
}

void EmbeddingProvider::require(const std::string& sequence) const {
  if (kind_ == ProviderKind::file_backed) {
    if (!table_->contains(sequence)) throw MissingEmbedding("no precomputed embedding for sequence " + sequence);
    return;
  }
  for (char c : sequence) (void)alphabet_.index(c);
}

template <class T>
Mat<T> EmbeddingProvider::embed(const std::string& sequence, const ConstMatMap<T>* table) const {
  const auto n = static_cast<Eigen::Index>(sequence.size());
  switch (kind_) {
    case ProviderKind::onehot: {
      Mat<T> out = Mat<T>::Zero(n, dim_);
      for (Eigen::Index i = 0; i < n; ++i) out(i, alphabet_.index(sequence[static_cast<std::size_t>(i)])) = T(1);
      return out;
    }
    case ProviderKind::learned_table: {
      if (table == nullptr) throw InvalidConfig("learned_table provider needs the model's embedding table");
      Mat<T> out(n, dim_);
      for (Eigen::Index i = 0; i < n; ++i) out.row(i) = table->row(alphabet_.index(sequence[static_cast<std::size_t>(i)]));
      return out;
    }
    case ProviderKind::file_backed:
      return table_->at(sequence).template cast<T>();
  }
  return {};
}

template Mat<float> EmbeddingProvider::embed<float>(const std::string&, const ConstMatMap<float>*) const;
template Mat<double> EmbeddingProvider::embed<double>(const std::string&, const ConstMatMap<double>*) const;

}  // namespace metalic
