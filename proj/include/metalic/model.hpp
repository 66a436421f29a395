#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "metalic/core.hpp"
#include "metalic/embed.hpp"
#include "metalic/nn.hpp"
#include "metalic/params.hpp"

namespace metalic {

struct ModelConfig {
  int embed_dim = 64;
  int n_layers = 2;
  int n_heads = 4;
  int axial_ffn_dim = 128;
  std::vector<int> mlp_layers{64, 64};
  double attention_dropout = 0.1;
  double dropout = 0.0;
  bool use_aux_channel = false;
  bool column_attention_enabled = true;
  /// Learned per-column position embedding added to residue cells.
  bool use_position_embedding = true;
  /// Whether the aux column joins the pooled head input when the aux channel is on.
  bool head_uses_aux = true;
  int max_length = kDefaultMaxLength;

  /// The published full-scale configuration.
  static ModelConfig paper_scale();
  /// Small configuration that trains in minutes on one CPU core.
  static ModelConfig desk_scale();
};

void validate(const ModelConfig& config);

/// Column-attention weights captured during a forward pass:
/// (layers, heads, rows, rows), each row averaged over residue columns.
struct AttentionMap {
  int layers = 0;
  int heads = 0;
  int rows = 0;
  std::vector<double> weights;

  double& at(int layer, int head, int i, int j) {
    return weights[((static_cast<std::size_t>(layer) * heads + head) * rows + i) * rows + j];
  }
  double at(int layer, int head, int i, int j) const {
    return weights[((static_cast<std::size_t>(layer) * heads + head) * rows + i) * rows + j];
  }
  /// (layers, rows, rows) average over heads.
  std::vector<double> head_average() const;
};

/// Attention cost of one forward pass, in score entries (query x key pairs).
struct AttentionCost {
  std::uint64_t row_terms = 0;     // sum over rows of (L+T)^2
  std::uint64_t column_terms = 0;  // sum over columns of K^2
  int blocks = 0;

  std::uint64_t per_block() const { return blocks > 0 ? (row_terms + column_terms) / static_cast<std::uint64_t>(blocks) : 0; }
  std::uint64_t multiply_adds(int embed_dim) const { return 2ull * static_cast<std::uint64_t>(embed_dim) * (row_terms + column_terms); }
};

/// The model input: K rows (support first, then query) by L + T columns.
template <class T>
struct Grid {
  int rows = 0;
  int residue_cols = 0;  // longest sequence in the context
  int extra_cols = 1;    // fitness column, plus aux column when enabled
  int n_support = 0;
  Mat<T> cells;                              // (rows * cols) x D
  std::vector<std::uint8_t> valid;           // per cell; 0 for padding
  std::vector<int> lengths;                  // per row
  std::vector<int> query_rows;               // grid rows scored by the head
  std::vector<T> fitness_inputs;             // per row; 0 for query rows
  std::vector<T> aux_inputs;                 // per row when aux is enabled
  Mat<T> residue_embeddings;                 // stacked (valid residue cells) x D_in
  std::vector<std::size_t> residue_cells;    // cell index of each stacked residue
  std::vector<int> residue_tokens;           // alphabet index (learned table only)

  int cols() const { return residue_cols + extra_cols; }
  int fitness_col() const { return residue_cols; }
  std::size_t cell(int row, int col) const { return static_cast<std::size_t>(row) * cols() + col; }
};

struct ForwardOptions {
  bool capture_attention = false;
  /// Source of dropout masks; nullptr runs in evaluation mode.
  Rng* dropout_rng = nullptr;
};

template <class T>
struct BlockCache {
  Mat<T> x_in;
  nn::LayerNormCache<T> ln_row, ln_col, ln_ffn;
  Mat<T> h_row, qkv_row, ctx_row;
  std::vector<nn::AttentionCache<T>> attn_row;
  Mat<T> x_row;
  Mat<T> h_col, qkv_col, ctx_col;
  std::vector<nn::AttentionCache<T>> attn_col;
  Mat<T> x_col;
  Mat<T> h_ffn, pre_act, act, act_drop_mask;
};

template <class T>
struct ForwardPass {
  std::vector<T> scores;
  std::optional<AttentionMap> attention;
  AttentionCost cost;

  // Retained activations for backward.
  std::vector<BlockCache<T>> blocks;
  Mat<T> x_final;
  nn::LayerNormCache<T> ln_final;
  Mat<T> z;
  std::vector<Mat<T>> head_inputs;  // input of each head layer (queries x width)
  std::vector<Mat<T>> head_pre;     // pre-activation of hidden head layers
  std::vector<Mat<T>> head_masks;
};

/// The in-context axial-attention regressor. Holds the configuration and the
/// parameter layout; parameters themselves live in ParamSet so that training,
/// fine-tuning and Reptile can clone and mutate them freely.
class AxialRegressor {
 public:
  AxialRegressor(ModelConfig config, const EmbeddingProvider& provider);

  const ModelConfig& config() const { return config_; }
  const EmbeddingProvider& provider() const { return provider_; }
  const std::shared_ptr<const ParamLayout>& layout() const { return layout_; }

  /// Scaled-uniform projections, zero biases, unit norms, small random
  /// flag/position embeddings. Deterministic in `rng`.
  ParamSet<float> init(Rng& rng) const;

  template <class T>
  Grid<T> assemble(const ContextBatch& context, const ParamSet<T>& params) const;

  template <class T>
  ForwardPass<T> forward(const ParamSet<T>& params, const Grid<T>& grid, const ForwardOptions& options = {}) const;

  /// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(scores).
  template <class T>
  void backward(const ParamSet<T>& params, const Grid<T>& grid, const ForwardPass<T>& pass,
                std::span<const T> dscores, ParamSet<T>& grads) const;

  /// assemble + forward in evaluation mode. Support may be empty.
  template <class T>
  std::vector<T> predict(const ParamSet<T>& params, std::span<const Record> support,
                         std::span<const Example> query) const;

  /// Closed-form attention cost for a K x (L + T) grid without padding.
  AttentionCost closed_form_cost(int rows, int residue_cols) const;

 private:
  struct Ids {
    TensorId embed_table = 0;
    TensorId input_w = 0, input_b = 0, position = 0;
    TensorId fitness_w = 0, fitness_b = 0, aux_w = 0, aux_b = 0, flags = 0;
    struct Block {
      TensorId row_ln_g, row_ln_b, row_qkv_w, row_qkv_b, row_out_w, row_out_b;
      TensorId col_ln_g, col_ln_b, col_qkv_w, col_qkv_b, col_out_w, col_out_b;
      TensorId ffn_ln_g, ffn_ln_b, fc1_w, fc1_b, fc2_w, fc2_b;
    };
    std::vector<Block> blocks;
    TensorId final_ln_g = 0, final_ln_b = 0;
    std::vector<TensorId> head_w, head_b;  // hidden layers then output
  };

  int head_input_width() const;

  ModelConfig config_;
  EmbeddingProvider provider_;
  std::shared_ptr<const ParamLayout> layout_;
  Ids ids_;
};

}  // namespace metalic
