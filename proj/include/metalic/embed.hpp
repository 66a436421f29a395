#pragma once

#include <memory>
#include <string>
#include <string_view>

#include "metalic/core.hpp"
#include "metalic/data.hpp"
#include "metalic/tensor.hpp"

namespace metalic {

enum class ProviderKind { onehot, learned_table, file_backed };

std::string_view to_string(ProviderKind kind);
ProviderKind provider_kind_from_string(std::string_view name);

/// Turns a sequence into an (L x D_in) residue embedding.
///
/// onehot        rows are standard basis vectors, D_in = |alphabet|
/// learned_table rows come from the model tensor "embed.table" (|alphabet| x D_in),
///               shared by every task and trained with the model unless frozen
/// file_backed   rows are read verbatim from a precomputed EmbeddingTable
class EmbeddingProvider {
 public:
  EmbeddingProvider() = default;

  static EmbeddingProvider onehot(Alphabet alphabet);
  static EmbeddingProvider learned_table(Alphabet alphabet, int dim, bool freeze = false);
  static EmbeddingProvider file_backed(std::shared_ptr<const EmbeddingTable> table, Alphabet alphabet);

  ProviderKind kind() const { return kind_; }
  int dim() const { return dim_; }
  const Alphabet& alphabet() const { return alphabet_; }
  bool frozen() const { return kind_ != ProviderKind::learned_table || freeze_; }
  bool uses_table_params() const { return kind_ == ProviderKind::learned_table; }

  /// Throws UnknownToken / MissingEmbedding when `sequence` cannot be embedded.
  void require(const std::string& sequence) const;

  /// `table` is the learned table (ignored by the other kinds).
  template <class T>
  Mat<T> embed(const std::string& sequence, const ConstMatMap<T>* table = nullptr) const;

 private:
  ProviderKind kind_ = ProviderKind::onehot;
  Alphabet alphabet_;
  int dim_ = 0;
  bool freeze_ = false;
  std::shared_ptr<const EmbeddingTable> table_;
};

}  // namespace metalic
