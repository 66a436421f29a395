#include "metalic/model.hpp"

#include <algorithm>
#include <cmath>

namespace metalic {

ModelConfig ModelConfig::paper_scale() {
  ModelConfig c;
  c.embed_dim = 768;
  c.n_layers = 5;
  c.n_heads = 4;
  c.axial_ffn_dim = 400;
  c.mlp_layers = {768, 768, 768, 768};
  c.attention_dropout = 0.1;
  c.dropout = 0.0;
  return c;
}

ModelConfig ModelConfig::desk_scale() {
  ModelConfig c;
  c.embed_dim = 64;
  c.n_layers = 2;
  c.n_heads = 4;
  c.axial_ffn_dim = 128;
  c.mlp_layers = {64, 64};
  return c;
}

void validate(const ModelConfig& c) {
  if (c.embed_dim <= 0 || c.n_layers <= 0 || c.n_heads <= 0 || c.axial_ffn_dim <= 0 || c.max_length <= 0) {
    throw InvalidConfig("model dimensions must be positive");
  }
  if (c.embed_dim % c.n_heads != 0) {
    throw InvalidConfig("embed_dim " + std::to_string(c.embed_dim) + " not divisible by n_heads " +
                        std::to_string(c.n_heads));
  }
  for (int m : c.mlp_layers) {
    if (m <= 0) throw InvalidConfig("mlp layer sizes must be positive");
  }
  if (c.attention_dropout < 0.0 || c.attention_dropout >= 1.0 || c.dropout < 0.0 || c.dropout >= 1.0) {
    throw InvalidConfig("dropout probabilities must be in [0, 1)");
  }
}

std::vector<double> AttentionMap::head_average() const {
  std::vector<double> out(static_cast<std::size_t>(layers) * rows * rows, 0.0);
  for (int l = 0; l < layers; ++l) {
    for (int h = 0; h < heads; ++h) {
      for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < rows; ++j) {
          out[(static_cast<std::size_t>(l) * rows + i) * rows + j] += at(l, h, i, j) / heads;
        }
      }
    }
  }
  return out;
}

AxialRegressor::AxialRegressor(ModelConfig config, const EmbeddingProvider& provider)
    : config_(std::move(config)), provider_(provider) {
  validate(config_);
  const int d = config_.embed_dim;
  const int d_in = provider_.dim();
  if (d_in <= 0) throw InvalidConfig("embedding provider has no dimension");
  auto layout = std::make_shared<ParamLayout>();
  if (provider_.uses_table_params()) ids_.embed_table = layout->add("embed.table", provider_.alphabet().size(), d_in);
  ids_.input_w = layout->add("input_proj.weight", d_in, d);
  ids_.input_b = layout->add("input_proj.bias", 1, d);
  if (config_.use_position_embedding) ids_.position = layout->add("position_embed.weight", config_.max_length, d);
  ids_.fitness_w = layout->add("fitness_proj.weight", 1, d);
  ids_.fitness_b = layout->add("fitness_proj.bias", 1, d);
  if (config_.use_aux_channel) {
    ids_.aux_w = layout->add("aux_proj.weight", 1, d);
    ids_.aux_b = layout->add("aux_proj.bias", 1, d);
  }
  ids_.flags = layout->add("flag_embed.weight", 2, d);
  for (int b = 0; b < config_.n_layers; ++b) {
    const std::string p = "blocks." + std::to_string(b) + ".";
    Ids::Block blk{};
    blk.row_ln_g = layout->add(p + "row_norm.weight", 1, d);
    blk.row_ln_b = layout->add(p + "row_norm.bias", 1, d);
    blk.row_qkv_w = layout->add(p + "row_attn.qkv.weight", d, 3 * d);
    blk.row_qkv_b = layout->add(p + "row_attn.qkv.bias", 1, 3 * d);
    blk.row_out_w = layout->add(p + "row_attn.out.weight", d, d);
    blk.row_out_b = layout->add(p + "row_attn.out.bias", 1, d);
    blk.col_ln_g = layout->add(p + "col_norm.weight", 1, d);
    blk.col_ln_b = layout->add(p + "col_norm.bias", 1, d);
    blk.col_qkv_w = layout->add(p + "col_attn.qkv.weight", d, 3 * d);
    blk.col_qkv_b = layout->add(p + "col_attn.qkv.bias", 1, 3 * d);
    blk.col_out_w = layout->add(p + "col_attn.out.weight", d, d);
    blk.col_out_b = layout->add(p + "col_attn.out.bias", 1, d);
    blk.ffn_ln_g = layout->add(p + "ffn_norm.weight", 1, d);
    blk.ffn_ln_b = layout->add(p + "ffn_norm.bias", 1, d);
    blk.fc1_w = layout->add(p + "ffn.fc1.weight", d, config_.axial_ffn_dim);
    blk.fc1_b = layout->add(p + "ffn.fc1.bias", 1, config_.axial_ffn_dim);
    blk.fc2_w = layout->add(p + "ffn.fc2.weight", config_.axial_ffn_dim, d);
    blk.fc2_b = layout->add(p + "ffn.fc2.bias", 1, d);
    ids_.blocks.push_back(blk);
  }
  ids_.final_ln_g = layout->add("final_norm.weight", 1, d);
  ids_.final_ln_b = layout->add("final_norm.bias", 1, d);
  int width = head_input_width();
  for (std::size_t i = 0; i < config_.mlp_layers.size(); ++i) {
    const std::string p = "head." + std::to_string(i) + ".";
    ids_.head_w.push_back(layout->add(p + "weight", width, config_.mlp_layers[i]));
    ids_.head_b.push_back(layout->add(p + "bias", 1, config_.mlp_layers[i]));
    width = config_.mlp_layers[i];
  }
  ids_.head_w.push_back(layout->add("head.out.weight", width, 1));
  ids_.head_b.push_back(layout->add("head.out.bias", 1, 1));
  layout_ = std::move(layout);
}

int AxialRegressor::head_input_width() const {
  const int parts = 2 + ((config_.use_aux_channel && config_.head_uses_aux) ? 1 : 0);
  return parts * config_.embed_dim;
}

ParamSet<float> AxialRegressor::init(Rng& rng) const {
  ParamSet<float> params(layout_);
  std::normal_distribution<float> small(0.0f, 0.02f);
  std::normal_distribution<float> unit(0.0f, 1.0f);
  for (TensorId id = 0; id < layout_->tensors().size(); ++id) {
    const auto& spec = layout_->spec(id);
    auto values = params.tensor(id);
    const bool is_norm = spec.name.find("norm.weight") != std::string::npos;
    if (spec.is_bias) {
      std::fill(values.begin(), values.end(), 0.0f);
    } else if (is_norm) {
      std::fill(values.begin(), values.end(), 1.0f);
    } else if (id == ids_.flags || (config_.use_position_embedding && id == ids_.position)) {
      for (auto& v : values) v = small(rng);
    } else if (provider_.uses_table_params() && id == ids_.embed_table) {
      for (auto& v : values) v = unit(rng);
    } else {
      const float bound = 1.0f / std::sqrt(static_cast<float>(spec.rows));
      std::uniform_real_distribution<float> uni(-bound, bound);
      for (auto& v : values) v = uni(rng);
    }
  }
  return params;
}

AttentionCost AxialRegressor::closed_form_cost(int rows, int residue_cols) const {
  const std::uint64_t k = static_cast<std::uint64_t>(rows);
  const std::uint64_t c = static_cast<std::uint64_t>(residue_cols + 1 + (config_.use_aux_channel ? 1 : 0));
  AttentionCost cost;
  cost.blocks = config_.n_layers;
  cost.row_terms = static_cast<std::uint64_t>(config_.n_layers) * k * c * c;
  cost.column_terms = config_.column_attention_enabled ? static_cast<std::uint64_t>(config_.n_layers) * c * k * k : 0;
  return cost;
}

template <class T>
Grid<T> AxialRegressor::assemble(const ContextBatch& context, const ParamSet<T>& params) const {
  const int k_rows = static_cast<int>(context.rows());
  if (k_rows == 0) throw InsufficientData("context has no rows");
  const int d = config_.embed_dim;
  Grid<T> g;
  g.rows = k_rows;
  g.n_support = static_cast<int>(context.support.size());
  g.extra_cols = config_.use_aux_channel ? 2 : 1;

  auto sequence_of = [&](int row) -> const std::string& {
    return row < g.n_support ? context.support[static_cast<std::size_t>(row)].sequence
                             : context.query[static_cast<std::size_t>(row - g.n_support)].sequence;
  };
  auto aux_of = [&](int row) -> const std::optional<double>& {
    return row < g.n_support ? context.support[static_cast<std::size_t>(row)].aux_score
                             : context.query[static_cast<std::size_t>(row - g.n_support)].aux_score;
  };

  std::size_t total_residues = 0;
  g.lengths.resize(static_cast<std::size_t>(k_rows));
  for (int r = 0; r < k_rows; ++r) {
    const auto& s = sequence_of(r);
    if (s.empty()) throw InsufficientData("empty sequence in context");
    provider_.require(s);
    g.lengths[static_cast<std::size_t>(r)] = static_cast<int>(s.size());
    g.residue_cols = std::max(g.residue_cols, static_cast<int>(s.size()));
    total_residues += s.size();
  }
  if (config_.use_position_embedding && g.residue_cols > config_.max_length) {
    throw InvalidConfig("sequence length " + std::to_string(g.residue_cols) + " exceeds model max_length " +
                        std::to_string(config_.max_length));
  }
  const int cols = g.cols();
  g.cells = Mat<T>::Zero(static_cast<Eigen::Index>(k_rows) * cols, d);
  g.valid.assign(static_cast<std::size_t>(k_rows) * cols, 0);
  g.fitness_inputs.assign(static_cast<std::size_t>(k_rows), T(0));
  if (config_.use_aux_channel) g.aux_inputs.assign(static_cast<std::size_t>(k_rows), T(0));

  std::optional<ConstMatMap<T>> table;
  if (provider_.uses_table_params()) table.emplace(params.mat(ids_.embed_table));
  g.residue_embeddings.resize(static_cast<Eigen::Index>(total_residues), provider_.dim());
  g.residue_cells.reserve(total_residues);
  if (provider_.uses_table_params()) g.residue_tokens.reserve(total_residues);
  Eigen::Index next = 0;
  for (int r = 0; r < k_rows; ++r) {
    const auto& s = sequence_of(r);
    const Mat<T> e = provider_.embed<T>(s, table ? &*table : nullptr);
    g.residue_embeddings.middleRows(next, e.rows()) = e;
    next += e.rows();
    for (int l = 0; l < static_cast<int>(s.size()); ++l) {
      g.residue_cells.push_back(g.cell(r, l));
      g.valid[g.cell(r, l)] = 1;
      if (provider_.uses_table_params()) g.residue_tokens.push_back(provider_.alphabet().index(s[static_cast<std::size_t>(l)]));
    }
    for (int t = 0; t < g.extra_cols; ++t) g.valid[g.cell(r, g.residue_cols + t)] = 1;
    if (r >= g.n_support) g.query_rows.push_back(r);
    else g.fitness_inputs[static_cast<std::size_t>(r)] = static_cast<T>(context.support[static_cast<std::size_t>(r)].fitness);
    if (config_.use_aux_channel) {
      const auto& aux = aux_of(r);
      if (!aux) throw InvalidConfig("aux channel enabled but a record has no aux_score");
      g.aux_inputs[static_cast<std::size_t>(r)] = static_cast<T>(*aux);
    }
  }

  // Residue cells: projection + position + row flag.
  const Mat<T> projected = g.residue_embeddings * params.mat(ids_.input_w);
  const auto in_b = params.mat(ids_.input_b);
  const auto flags = params.mat(ids_.flags);
  for (std::size_t i = 0; i < g.residue_cells.size(); ++i) {
    const std::size_t cell = g.residue_cells[i];
    const int row = static_cast<int>(cell / static_cast<std::size_t>(cols));
    const int col = static_cast<int>(cell % static_cast<std::size_t>(cols));
    auto dst = g.cells.row(static_cast<Eigen::Index>(cell));
    dst = projected.row(static_cast<Eigen::Index>(i)) + in_b.row(0) + flags.row(row < g.n_support ? 0 : 1);
    if (config_.use_position_embedding) dst += params.mat(ids_.position).row(col);
  }
  // Fitness (and aux) tokens: scalar projection + row flag.
  const auto fw = params.mat(ids_.fitness_w);
  const auto fb = params.mat(ids_.fitness_b);
  for (int r = 0; r < k_rows; ++r) {
    const auto flag = flags.row(r < g.n_support ? 0 : 1);
    g.cells.row(static_cast<Eigen::Index>(g.cell(r, g.fitness_col()))) =
        g.fitness_inputs[static_cast<std::size_t>(r)] * fw.row(0) + fb.row(0) + flag;
    if (config_.use_aux_channel) {
      g.cells.row(static_cast<Eigen::Index>(g.cell(r, g.fitness_col() + 1))) =
          g.aux_inputs[static_cast<std::size_t>(r)] * params.mat(ids_.aux_w).row(0) + params.mat(ids_.aux_b).row(0) + flag;
    }
  }
  return g;
}

namespace {

template <class T>
using StridedMap = Eigen::Map<Mat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstStridedMap = Eigen::Map<const Mat<T>, 0, Eigen::OuterStride<>>;

template <class T>
void apply_gelu(const Mat<T>& pre, Mat<T>& out) {
  out = nn::gelu<T>(pre);
}

}  // namespace

template <class T>
ForwardPass<T> AxialRegressor::forward(const ParamSet<T>& params, const Grid<T>& g, const ForwardOptions& options) const {
  const int d = config_.embed_dim;
  const int heads = config_.n_heads;
  const int k_rows = g.rows;
  const int cols = g.cols();
  const double attn_p = options.dropout_rng ? config_.attention_dropout : 0.0;
  const double drop_p = options.dropout_rng ? config_.dropout : 0.0;

  ForwardPass<T> pass;
  pass.blocks.resize(static_cast<std::size_t>(config_.n_layers));
  pass.cost.blocks = config_.n_layers;
  if (options.capture_attention) {
    AttentionMap map;
    map.layers = config_.n_layers;
    map.heads = heads;
    map.rows = k_rows;
    map.weights.assign(static_cast<std::size_t>(map.layers) * heads * k_rows * k_rows, 0.0);
    pass.attention = std::move(map);
  }

  Mat<T> x = g.cells;
  Mat<T> tmp;
  std::vector<std::uint8_t> key_valid;
  for (int b = 0; b < config_.n_layers; ++b) {
    const auto& id = ids_.blocks[static_cast<std::size_t>(b)];
    auto& bc = pass.blocks[static_cast<std::size_t>(b)];
    bc.x_in = x;

    // Row attention: within each sequence, across its L + T columns.
    nn::layer_norm_forward<T>(x, params.mat(id.row_ln_g), params.mat(id.row_ln_b), bc.h_row, bc.ln_row);
    nn::linear_forward<T>(bc.h_row, params.mat(id.row_qkv_w), params.mat(id.row_qkv_b), bc.qkv_row);
    bc.ctx_row.resize(x.rows(), d);
    bc.attn_row.resize(static_cast<std::size_t>(k_rows));
    key_valid.resize(static_cast<std::size_t>(cols));
    for (int r = 0; r < k_rows; ++r) {
      std::copy_n(g.valid.begin() + static_cast<std::ptrdiff_t>(g.cell(r, 0)), cols, key_valid.begin());
      nn::attention_forward<T>(bc.qkv_row.middleRows(static_cast<Eigen::Index>(r) * cols, cols), key_valid, heads,
                               attn_p, options.dropout_rng,
                               bc.ctx_row.middleRows(static_cast<Eigen::Index>(r) * cols, cols),
                               bc.attn_row[static_cast<std::size_t>(r)]);
      pass.cost.row_terms += static_cast<std::uint64_t>(cols) * cols;
    }
    nn::linear_forward<T>(bc.ctx_row, params.mat(id.row_out_w), params.mat(id.row_out_b), tmp);
    bc.x_row = x + tmp;

    // Column attention: within each column, across the K rows of the context.
    if (config_.column_attention_enabled) {
      nn::layer_norm_forward<T>(bc.x_row, params.mat(id.col_ln_g), params.mat(id.col_ln_b), bc.h_col, bc.ln_col);
      nn::linear_forward<T>(bc.h_col, params.mat(id.col_qkv_w), params.mat(id.col_qkv_b), bc.qkv_col);
      bc.ctx_col.resize(x.rows(), d);
      bc.attn_col.resize(static_cast<std::size_t>(cols));
      key_valid.resize(static_cast<std::size_t>(k_rows));
      for (int c = 0; c < cols; ++c) {
        for (int r = 0; r < k_rows; ++r) key_valid[static_cast<std::size_t>(r)] = g.valid[g.cell(r, c)];
        ConstStridedMap<T> qkv(bc.qkv_col.data() + static_cast<std::ptrdiff_t>(c) * 3 * d, k_rows, 3 * d,
                               Eigen::OuterStride<>(static_cast<Eigen::Index>(cols) * 3 * d));
        StridedMap<T> out(bc.ctx_col.data() + static_cast<std::ptrdiff_t>(c) * d, k_rows, d,
                          Eigen::OuterStride<>(static_cast<Eigen::Index>(cols) * d));
        auto& cache = bc.attn_col[static_cast<std::size_t>(c)];
        nn::attention_forward<T>(qkv, key_valid, heads, attn_p, options.dropout_rng, out, cache);
        pass.cost.column_terms += static_cast<std::uint64_t>(k_rows) * k_rows;
      }
      nn::linear_forward<T>(bc.ctx_col, params.mat(id.col_out_w), params.mat(id.col_out_b), tmp);
      bc.x_col = bc.x_row + tmp;
    } else {
      bc.x_col = bc.x_row;
    }

    if (pass.attention) {
      auto& map = *pass.attention;
      for (int r = 0; r < k_rows; ++r) {
        if (!config_.column_attention_enabled) {
          for (int h = 0; h < heads; ++h) map.at(b, h, r, r) = 1.0;
          continue;
        }
        const int len = g.lengths[static_cast<std::size_t>(r)];
        for (int h = 0; h < heads; ++h) {
          for (int c = 0; c < len; ++c) {
            const auto& p = bc.attn_col[static_cast<std::size_t>(c)].probs[static_cast<std::size_t>(h)];
            for (int j = 0; j < k_rows; ++j) map.at(b, h, r, j) += static_cast<double>(p(r, j)) / len;
          }
        }
      }
    }

    // Position-wise feed-forward.
    nn::layer_norm_forward<T>(bc.x_col, params.mat(id.ffn_ln_g), params.mat(id.ffn_ln_b), bc.h_ffn, bc.ln_ffn);
    nn::linear_forward<T>(bc.h_ffn, params.mat(id.fc1_w), params.mat(id.fc1_b), bc.pre_act);
    apply_gelu(bc.pre_act, bc.act);
    bc.act_drop_mask = nn::dropout_mask<T>(bc.act.rows(), bc.act.cols(), drop_p, options.dropout_rng);
    if (bc.act_drop_mask.size() > 0) bc.act.array() *= bc.act_drop_mask.array();
    nn::linear_forward<T>(bc.act, params.mat(id.fc2_w), params.mat(id.fc2_b), tmp);
    x = bc.x_col + tmp;
  }

  pass.x_final = x;
  nn::layer_norm_forward<T>(x, params.mat(ids_.final_ln_g), params.mat(ids_.final_ln_b), pass.z, pass.ln_final);

  // Head: mask-aware mean over residue columns, the fitness token and
  // optionally the aux token, then the MLP.
  const int n_query = static_cast<int>(g.query_rows.size());
  const bool head_aux = config_.use_aux_channel && config_.head_uses_aux;
  Mat<T> h(n_query, head_input_width());
  for (int q = 0; q < n_query; ++q) {
    const int r = g.query_rows[static_cast<std::size_t>(q)];
    const int len = g.lengths[static_cast<std::size_t>(r)];
    const auto first = static_cast<Eigen::Index>(g.cell(r, 0));
    h.row(q).head(d) = pass.z.middleRows(first, len).colwise().mean();
    h.row(q).segment(d, d) = pass.z.row(static_cast<Eigen::Index>(g.cell(r, g.fitness_col())));
    if (head_aux) h.row(q).segment(2 * d, d) = pass.z.row(static_cast<Eigen::Index>(g.cell(r, g.fitness_col() + 1)));
  }
  const std::size_t n_hidden = config_.mlp_layers.size();
  pass.head_inputs.resize(n_hidden + 1);
  pass.head_pre.resize(n_hidden);
  pass.head_masks.resize(n_hidden);
  for (std::size_t i = 0; i < n_hidden; ++i) {
    pass.head_inputs[i] = h;
    nn::linear_forward<T>(h, params.mat(ids_.head_w[i]), params.mat(ids_.head_b[i]), pass.head_pre[i]);
    apply_gelu(pass.head_pre[i], h);
    pass.head_masks[i] = nn::dropout_mask<T>(h.rows(), h.cols(), drop_p, options.dropout_rng);
    if (pass.head_masks[i].size() > 0) h.array() *= pass.head_masks[i].array();
  }
  pass.head_inputs[n_hidden] = h;
  Mat<T> out;
  nn::linear_forward<T>(h, params.mat(ids_.head_w[n_hidden]), params.mat(ids_.head_b[n_hidden]), out);
  pass.scores.resize(static_cast<std::size_t>(n_query));
  for (int q = 0; q < n_query; ++q) {
    const T v = out(q, 0);
    if (!std::isfinite(v)) throw NonFiniteActivation("non-finite query score; model has diverged");
    pass.scores[static_cast<std::size_t>(q)] = v;
  }
  return pass;
}

template <class T>
void AxialRegressor::backward(const ParamSet<T>& params, const Grid<T>& g, const ForwardPass<T>& pass,
                              std::span<const T> dscores, ParamSet<T>& grads) const {
  const int d = config_.embed_dim;
  const int heads = config_.n_heads;
  const int k_rows = g.rows;
  const int cols = g.cols();
  const int n_query = static_cast<int>(g.query_rows.size());
  if (static_cast<int>(dscores.size()) != n_query) throw LengthMismatch("dscores size != number of query rows");

  // Head.
  const std::size_t n_hidden = config_.mlp_layers.size();
  Mat<T> dh(n_query, 1);
  for (int q = 0; q < n_query; ++q) dh(q, 0) = dscores[static_cast<std::size_t>(q)];
  Mat<T> dprev;
  nn::linear_backward<T>(pass.head_inputs[n_hidden], dh, params.mat(ids_.head_w[n_hidden]), grads.mat(ids_.head_w[n_hidden]),
                         grads.mat(ids_.head_b[n_hidden]), &dprev);
  for (std::size_t i = n_hidden; i-- > 0;) {
    if (pass.head_masks[i].size() > 0) dprev.array() *= pass.head_masks[i].array();
    Mat<T> dpre = dprev.cwiseProduct(nn::gelu_grad<T>(pass.head_pre[i]));
    nn::linear_backward<T>(pass.head_inputs[i], dpre, params.mat(ids_.head_w[i]), grads.mat(ids_.head_w[i]),
                           grads.mat(ids_.head_b[i]), &dprev);
  }

  const bool head_aux = config_.use_aux_channel && config_.head_uses_aux;
  Mat<T> dz = Mat<T>::Zero(pass.z.rows(), d);
  for (int q = 0; q < n_query; ++q) {
    const int r = g.query_rows[static_cast<std::size_t>(q)];
    const int len = g.lengths[static_cast<std::size_t>(r)];
    const auto first = static_cast<Eigen::Index>(g.cell(r, 0));
    const RowVec<T> pooled = dprev.row(q).head(d) / static_cast<T>(len);
    dz.middleRows(first, len).rowwise() += pooled;
    dz.row(static_cast<Eigen::Index>(g.cell(r, g.fitness_col()))) += dprev.row(q).segment(d, d);
    if (head_aux) dz.row(static_cast<Eigen::Index>(g.cell(r, g.fitness_col() + 1))) += dprev.row(q).segment(2 * d, d);
  }

  Mat<T> dx;
  nn::layer_norm_backward<T>(dz, params.mat(ids_.final_ln_g), pass.ln_final, dx, grads.mat(ids_.final_ln_g),
                             grads.mat(ids_.final_ln_b));

  Mat<T> dtmp, dln;
  for (int b = config_.n_layers; b-- > 0;) {
    const auto& id = ids_.blocks[static_cast<std::size_t>(b)];
    const auto& bc = pass.blocks[static_cast<std::size_t>(b)];

    // Feed-forward.
    nn::linear_backward<T>(bc.act, dx, params.mat(id.fc2_w), grads.mat(id.fc2_w), grads.mat(id.fc2_b), &dtmp);
    if (bc.act_drop_mask.size() > 0) dtmp.array() *= bc.act_drop_mask.array();
    dtmp.array() *= nn::gelu_grad<T>(bc.pre_act).array();
    Mat<T> dh_ffn;
    nn::linear_backward<T>(bc.h_ffn, dtmp, params.mat(id.fc1_w), grads.mat(id.fc1_w), grads.mat(id.fc1_b), &dh_ffn);
    nn::layer_norm_backward<T>(dh_ffn, params.mat(id.ffn_ln_g), bc.ln_ffn, dln, grads.mat(id.ffn_ln_g),
                               grads.mat(id.ffn_ln_b));
    dx += dln;

    // Column attention.
    if (config_.column_attention_enabled) {
      Mat<T> dctx;
      nn::linear_backward<T>(bc.ctx_col, dx, params.mat(id.col_out_w), grads.mat(id.col_out_w), grads.mat(id.col_out_b),
                             &dctx);
      Mat<T> dqkv(dx.rows(), 3 * d);
      for (int c = 0; c < cols; ++c) {
        const Eigen::OuterStride<> s3(static_cast<Eigen::Index>(cols) * 3 * d);
        ConstStridedMap<T> qkv(bc.qkv_col.data() + static_cast<std::ptrdiff_t>(c) * 3 * d, k_rows, 3 * d, s3);
        ConstStridedMap<T> dout(dctx.data() + static_cast<std::ptrdiff_t>(c) * d, k_rows, d,
                                Eigen::OuterStride<>(static_cast<Eigen::Index>(cols) * d));
        StridedMap<T> dq(dqkv.data() + static_cast<std::ptrdiff_t>(c) * 3 * d, k_rows, 3 * d, s3);
        nn::attention_backward<T>(qkv, dout, bc.attn_col[static_cast<std::size_t>(c)], heads, dq);
      }
      Mat<T> dh_col;
      nn::linear_backward<T>(bc.h_col, dqkv, params.mat(id.col_qkv_w), grads.mat(id.col_qkv_w), grads.mat(id.col_qkv_b),
                             &dh_col);
      nn::layer_norm_backward<T>(dh_col, params.mat(id.col_ln_g), bc.ln_col, dln, grads.mat(id.col_ln_g),
                                 grads.mat(id.col_ln_b));
      dx += dln;
    }

    // Row attention.
    {
      Mat<T> dctx;
      nn::linear_backward<T>(bc.ctx_row, dx, params.mat(id.row_out_w), grads.mat(id.row_out_w), grads.mat(id.row_out_b),
                             &dctx);
      Mat<T> dqkv(dx.rows(), 3 * d);
      for (int r = 0; r < k_rows; ++r) {
        const auto first = static_cast<Eigen::Index>(r) * cols;
        nn::attention_backward<T>(bc.qkv_row.middleRows(first, cols), dctx.middleRows(first, cols),
                                  bc.attn_row[static_cast<std::size_t>(r)], heads, dqkv.middleRows(first, cols));
      }
      Mat<T> dh_row;
      nn::linear_backward<T>(bc.h_row, dqkv, params.mat(id.row_qkv_w), grads.mat(id.row_qkv_w), grads.mat(id.row_qkv_b),
                             &dh_row);
      nn::layer_norm_backward<T>(dh_row, params.mat(id.row_ln_g), bc.ln_row, dln, grads.mat(id.row_ln_g),
                                 grads.mat(id.row_ln_b));
      dx += dln;
    }
  }

  // Input assembly.
  auto dflags = grads.mat(ids_.flags);
  auto dfw = grads.mat(ids_.fitness_w);
  auto dfb = grads.mat(ids_.fitness_b);
  for (int r = 0; r < k_rows; ++r) {
    const int flag = r < g.n_support ? 0 : 1;
    for (int c = 0; c < cols; ++c) {
      const std::size_t cell = g.cell(r, c);
      if (g.valid[cell]) dflags.row(flag) += dx.row(static_cast<Eigen::Index>(cell));
    }
    const auto dfit = dx.row(static_cast<Eigen::Index>(g.cell(r, g.fitness_col())));
    dfw.row(0) += g.fitness_inputs[static_cast<std::size_t>(r)] * dfit;
    dfb.row(0) += dfit;
    if (config_.use_aux_channel) {
      const auto daux = dx.row(static_cast<Eigen::Index>(g.cell(r, g.fitness_col() + 1)));
      grads.mat(ids_.aux_w).row(0) += g.aux_inputs[static_cast<std::size_t>(r)] * daux;
      grads.mat(ids_.aux_b).row(0) += daux;
    }
  }
  Mat<T> dres(static_cast<Eigen::Index>(g.residue_cells.size()), d);
  for (std::size_t i = 0; i < g.residue_cells.size(); ++i) {
    const std::size_t cell = g.residue_cells[i];
    dres.row(static_cast<Eigen::Index>(i)) = dx.row(static_cast<Eigen::Index>(cell));
    if (config_.use_position_embedding) {
      grads.mat(ids_.position).row(static_cast<Eigen::Index>(cell % static_cast<std::size_t>(cols))) +=
          dx.row(static_cast<Eigen::Index>(cell));
    }
  }
  grads.mat(ids_.input_w).noalias() += g.residue_embeddings.transpose() * dres;
  grads.mat(ids_.input_b).row(0) += dres.colwise().sum();
  if (provider_.uses_table_params() && !provider_.frozen()) {
    const Mat<T> demb = dres * params.mat(ids_.input_w).transpose();
    auto dtable = grads.mat(ids_.embed_table);
    for (std::size_t i = 0; i < g.residue_tokens.size(); ++i) {
      dtable.row(g.residue_tokens[i]) += demb.row(static_cast<Eigen::Index>(i));
    }
  }
}

template <class T>
std::vector<T> AxialRegressor::predict(const ParamSet<T>& params, std::span<const Record> support,
                                       std::span<const Example> query) const {
  ContextBatch context;
  context.support.assign(support.begin(), support.end());
  context.query.assign(query.begin(), query.end());
  context.query_labels.assign(query.size(), 0.0);
  const auto grid = assemble(context, params);
  return forward(params, grid, ForwardOptions{}).scores;
}

#define METALIC_INSTANTIATE_MODEL(T)                                                                             \
  template Grid<T> AxialRegressor::assemble<T>(const ContextBatch&, const ParamSet<T>&) const;                   \
  template ForwardPass<T> AxialRegressor::forward<T>(const ParamSet<T>&, const Grid<T>&, const ForwardOptions&) \
      const;                                                                                                     \
  template void AxialRegressor::backward<T>(const ParamSet<T>&, const Grid<T>&, const ForwardPass<T>&,          \
                                            std::span<const T>, ParamSet<T>&) const;                             \
  template std::vector<T> AxialRegressor::predict<T>(const ParamSet<T>&, std::span<const Record>,               \
                                                     std::span<const Example>) const;

METALIC_INSTANTIATE_MODEL(float)
METALIC_INSTANTIATE_MODEL(double)

#undef METALIC_INSTANTIATE_MODEL

}  // namespace metalic
