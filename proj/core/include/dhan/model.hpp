#pragma once

// The hierarchical-attention CTR models and baselines. A shared activation
// unit scores behavior items against the target; per-attribute-group softmax
// weights pool items into cluster vectors (normalized weighted sums), and a
// second attention level combines clusters into the overall representation x.
// The final feature [x..., i_x, e_a] feeds a two-logit head MLP.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dhan/data.hpp"
#include "dhan/hierarchy.hpp"
#include "dhan/optim.hpp"
#include "dhan/snapshot.hpp"
#include "dhan/tensor.hpp"

namespace dhan {

enum class Variant { dhan, dhan_gru, din, wdl, pnn };

inline Variant parse_variant(const std::string& s) {
  if (s == "dhan") return Variant::dhan;
  if (s == "dhan_gru") return Variant::dhan_gru;
  if (s == "din") return Variant::din;
  if (s == "wdl") return Variant::wdl;
  if (s == "pnn") return Variant::pnn;
  throw ConfigError("model.variant: unknown variant \"" + s + "\"");
}

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::dhan: return "dhan";
    case Variant::dhan_gru: return "dhan_gru";
    case Variant::din: return "din";
    case Variant::wdl: return "wdl";
    case Variant::pnn: return "pnn";
  }
  return "?";
}

struct ModelConfig {
  Variant variant = Variant::dhan;
  int embedding_dim = 16;
  int t_max = 50;
  std::vector<int> act_unit_widths{36, 1};  // last width must be 1
  std::vector<int> head_widths{80, 40};
  bool attr_embedding = false;
  HierarchySpec hierarchy;

  // Resolved against the vocabulary.
  std::vector<std::string> attr_keys;
  int n_items = 0;
  int n_users = 0;
  std::vector<int> n_attrs;

  void validate() const {
    if (embedding_dim < 1) throw ConfigError("model.embedding_dim: must be >= 1");
    if (t_max < 1) throw ConfigError("model.t_max: must be >= 1");
    if (act_unit_widths.empty() || act_unit_widths.back() != 1)
      throw ConfigError("model.act_unit_widths: must be non-empty and end in 1");
    if (head_widths.empty()) throw ConfigError("model.head_widths: must be non-empty");
    if (n_items < 2) throw ConfigError("model: item vocabulary is empty");
    hierarchy.validate();
    if (attr_keys != hierarchy.attr_keys())
      throw ConfigError("model: attribute keys do not match the hierarchy");
    if (n_attrs.size() != attr_keys.size())
      throw ConfigError("model: attribute vocabulary sizes do not match the hierarchy");
  }

  bool uses_hierarchy() const { return variant == Variant::dhan || variant == Variant::dhan_gru; }

  int head_input_dim() const {
    const int d = embedding_dim;
    switch (variant) {
      case Variant::dhan:
      case Variant::dhan_gru:
        return (static_cast<int>(hierarchy.dimensions.size()) + 2) * d;
      case Variant::din:
      case Variant::wdl:
        return 2 * d;
      case Variant::pnn:
        return 2 * d + 1;
    }
    return 0;
  }
};

// ---------------------------------------------------------------------------
// Parameter structs

template <class S>
struct MlpT {
  std::vector<TensorT<S>> W, b, slope;  // slope per hidden layer (parametric rectifier)
};

template <class S>
MlpT<S> make_mlp(int input_dim, const std::vector<int>& widths, std::mt19937& rng) {
  MlpT<S> mlp;
  int in = input_dim;
  for (size_t i = 0; i < widths.size(); ++i) {
    mlp.W.push_back(fan_in_init<S>(in, widths[i], rng));
    mlp.b.push_back(TensorT<S>::zeros({1, widths[i]}));
    if (i + 1 < widths.size()) {
      TensorT<S> a = TensorT<S>::zeros({widths[i]});
      for (S& v : a.values) v = S(0.25);
      mlp.slope.push_back(std::move(a));
    }
    in = widths[i];
  }
  return mlp;
}

template <class S>
TensorT<S> mlp_apply(TapeT<S>& tape, const MlpT<S>& mlp, const TensorT<S>& x) {
  TensorT<S> h = x;
  for (size_t i = 0; i < mlp.W.size(); ++i) {
    h = add(tape, matmul(tape, h, mlp.W[i]), mlp.b[i]);
    if (i + 1 < mlp.W.size()) h = prelu(tape, h, mlp.slope[i]);
  }
  return h;
}

template <class S>
struct ActUnitT {
  MlpT<S> mlp;  // input is the 4d interaction feature, output a single score
};

template <class S>
struct GruT {
  TensorT<S> Wz, Uz, bz, Wr, Ur, br, Wh, Uh, bh;
};

template <class S>
struct DhanParamsT {
  ModelConfig config;

  TensorT<S> item_emb;
  std::vector<TensorT<S>> attr_emb;                 // per key, optional
  ActUnitT<S> level1;                               // shared item-level unit
  std::vector<std::vector<ActUnitT<S>>> dim_units;  // [dimension][attribute level]
  GruT<S> gru;
  ActUnitT<S> gru_unit;
  MlpT<S> head;
  TensorT<S> wide_user, wide_item;
  std::vector<TensorT<S>> wide_attr;

  static DhanParamsT init(const ModelConfig& cfg, std::uint64_t seed);
  ParamRefs<S> refs();
};

namespace detail {

template <class S>
ActUnitT<S> make_act_unit(int key_dim, const std::vector<int>& widths, std::mt19937& rng) {
  return ActUnitT<S>{make_mlp<S>(4 * key_dim, widths, rng)};
}

template <class S>
void mlp_refs(ParamRefs<S>& out, MlpT<S>& mlp, const std::string& prefix) {
  for (size_t i = 0; i < mlp.W.size(); ++i) {
    out.push_back({prefix + ".W" + std::to_string(i), &mlp.W[i]});
    out.push_back({prefix + ".b" + std::to_string(i), &mlp.b[i]});
    if (i < mlp.slope.size()) out.push_back({prefix + ".a" + std::to_string(i), &mlp.slope[i]});
  }
}

}  // namespace detail

// Parameter creation order matters: the rng is drawn in refs() order so that
// initialization is a pure function of (config, seed).
template <class S>
DhanParamsT<S> DhanParamsT<S>::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  DhanParamsT<S> p;
  p.config = cfg;
  const int d = cfg.embedding_dim;

  p.item_emb = uniform_init<S>({cfg.n_items, d}, S(-0.05), S(0.05), rng);
  if (cfg.uses_hierarchy() && cfg.attr_embedding)
    for (size_t k = 0; k < cfg.attr_keys.size(); ++k)
      p.attr_emb.push_back(uniform_init<S>({cfg.n_attrs[k], d}, S(-0.05), S(0.05), rng));

  if (cfg.variant != Variant::wdl && cfg.variant != Variant::pnn)
    p.level1 = detail::make_act_unit<S>(d, cfg.act_unit_widths, rng);

  if (cfg.uses_hierarchy())
    for (const DimensionSpec& dim : cfg.hierarchy.dimensions) {
      std::vector<ActUnitT<S>> units;
      for (size_t j = 0; j < dim.attr_keys().size(); ++j)
        units.push_back(detail::make_act_unit<S>(d, cfg.act_unit_widths, rng));
      p.dim_units.push_back(std::move(units));
    }

  if (cfg.variant == Variant::dhan_gru) {
    auto w = [&] { return fan_in_init<S>(d, d, rng); };
    p.gru = GruT<S>{w(), w(), TensorT<S>::zeros({1, d}), w(), w(), TensorT<S>::zeros({1, d}),
                    w(), w(), TensorT<S>::zeros({1, d})};
    p.gru_unit = detail::make_act_unit<S>(d, cfg.act_unit_widths, rng);
  }

  if (cfg.variant == Variant::wdl) {
    p.wide_user = TensorT<S>::zeros({cfg.n_users, 1});
    p.wide_item = TensorT<S>::zeros({cfg.n_items, 1});
    for (int n : cfg.n_attrs) p.wide_attr.push_back(TensorT<S>::zeros({n, 1}));
  }

  p.head = make_mlp<S>(cfg.head_input_dim(), [&] {
    std::vector<int> w = cfg.head_widths;
    w.push_back(2);
    return w;
  }(), rng);
  return p;
}

template <class S>
ParamRefs<S> DhanParamsT<S>::refs() {
  ParamRefs<S> out;
  out.push_back({"item_emb", &item_emb});
  for (size_t k = 0; k < attr_emb.size(); ++k)
    out.push_back({"attr_emb." + config.attr_keys[k], &attr_emb[k]});
  if (!level1.mlp.W.empty()) detail::mlp_refs(out, level1.mlp, "level1");
  for (size_t di = 0; di < dim_units.size(); ++di)
    for (size_t j = 0; j < dim_units[di].size(); ++j)
      detail::mlp_refs(out, dim_units[di][j].mlp,
                       "hier." + config.hierarchy.dimensions[di].name + ".l" + std::to_string(j + 2));
  if (config.variant == Variant::dhan_gru) {
    out.push_back({"gru.Wz", &gru.Wz});
    out.push_back({"gru.Uz", &gru.Uz});
    out.push_back({"gru.bz", &gru.bz});
    out.push_back({"gru.Wr", &gru.Wr});
    out.push_back({"gru.Ur", &gru.Ur});
    out.push_back({"gru.br", &gru.br});
    out.push_back({"gru.Wh", &gru.Wh});
    out.push_back({"gru.Uh", &gru.Uh});
    out.push_back({"gru.bh", &gru.bh});
    detail::mlp_refs(out, gru_unit.mlp, "gru_att");
  }
  detail::mlp_refs(out, head, "head");
  if (config.variant == Variant::wdl) {
    out.push_back({"wide.user", &wide_user});
    out.push_back({"wide.item", &wide_item});
    for (size_t k = 0; k < wide_attr.size(); ++k)
      out.push_back({"wide." + config.attr_keys[k], &wide_attr[k]});
  }
  return out;
}

using DhanParams = DhanParamsT<float>;

inline std::vector<SnapshotEntry> to_snapshot(DhanParams& params) {
  std::vector<SnapshotEntry> out;
  for (auto& r : params.refs()) out.push_back({r.name, r.tensor->shape, r.tensor->values});
  return out;
}

inline void from_snapshot(DhanParams& params, const std::vector<SnapshotEntry>& entries) {
  ParamRefs<float> refs = params.refs();
  if (refs.size() != entries.size())
    throw ParseError("snapshot: expected " + std::to_string(refs.size()) + " parameters, found " +
                     std::to_string(entries.size()));
  for (auto& r : refs) {
    const SnapshotEntry* found = nullptr;
    for (const SnapshotEntry& e : entries)
      if (e.name == r.name) {
        found = &e;
        break;
      }
    if (!found) throw ParseError("snapshot: missing parameter " + r.name);
    if (found->shape != r.tensor->shape)
      throw ParseError("snapshot: parameter " + r.name + " has shape " + shape_str(found->shape) +
                       ", expected " + shape_str(r.tensor->shape));
    r.tensor->values = found->values;
  }
}

// ---------------------------------------------------------------------------
// Forward trace (weights, clusters and features of one sample's pass)

template <class S>
struct TraceGroup {
  int attr = 0;
  S local_weight = S(0);      // softmax weight within the parent group
  S effective_weight = S(0);  // product of local weights up to the top
  std::vector<int> positions;
  std::vector<S> item_weights;  // leaf level only
  std::vector<S> cluster;
};

template <class S>
struct TraceLevel {
  std::string key;
  std::vector<TraceGroup<S>> groups;
};

template <class S>
struct TraceDim {
  std::string name;
  std::vector<TraceLevel<S>> levels;  // [0] = lowest attribute level
  std::vector<S> x;
};

template <class S>
struct ForwardTrace {
  std::vector<S> raw_scores;      // level-1 activation-unit scores, per position
  std::vector<S> global_weights;  // softmax of raw scores over unmasked positions
  std::vector<TraceDim<S>> dims;
  std::vector<S> i_x;
  std::vector<S> pooled;  // baseline pooled behavior feature
  std::vector<S> X;       // final feature fed to the head MLP
  S wide_logit = S(0);
  S pnn_inner = S(0);
  S p = S(0);
};

// ---------------------------------------------------------------------------
// Building blocks

// Scores each key row against the query through the interaction feature
// [key, key - query, key * query, query].
template <class S>
TensorT<S> act_unit_scores(TapeT<S>& tape, const ActUnitT<S>& unit, const TensorT<S>& keys,
                           const TensorT<S>& query) {
  if (keys.shape.size() != 2 || query.rows() != 1 || keys.cols() != query.cols())
    throw ShapeError("act_unit_scores: incompatible shapes " + shape_str(keys.shape) + " and " +
                     shape_str(query.shape));
  const TensorT<S> q = repeat_row(tape, query, keys.rows());
  const TensorT<S> feat =
      concat_cols(tape, {keys, sub(tape, keys, q), mul(tape, keys, q), q});
  return mlp_apply(tape, unit.mlp, feat);  // [X x 1]
}

template <class S>
struct ItemAttentionResult {
  TensorT<S> raw_scores;                  // [T x 1]
  std::vector<TensorT<S>> group_weights;  // per group, [1 x group size]
};

// Raw activation-unit scores per position plus per-group softmax weights.
template <class S>
ItemAttentionResult<S> item_attention(TapeT<S>& tape, const ActUnitT<S>& unit,
                                      const TensorT<S>& behaviors, const TensorT<S>& target,
                                      const GroupedBehaviors& groups) {
  ItemAttentionResult<S> out;
  out.raw_scores = act_unit_scores(tape, unit, behaviors, target);
  for (const Group& g : groups.groups) {
    TensorT<S> sc = gather_rows(tape, out.raw_scores, g.positions);
    sc = reshape(tape, sc, {1, static_cast<int>(g.positions.size())});
    out.group_weights.push_back(masked_softmax(tape, sc));
  }
  return out;
}

// Normalized weighted sum: (sum_k w_k e_k) / (sum_k w_k). The division is
// applied even for softmax weights so the formula holds for any positives.
template <class S>
TensorT<S> attribute_pool(TapeT<S>& tape, const TensorT<S>& weights, const TensorT<S>& embeddings) {
  if (weights.rows() != 1 || weights.cols() != embeddings.rows())
    throw ShapeError("attribute_pool: incompatible shapes " + shape_str(weights.shape) + " and " +
                     shape_str(embeddings.shape));
  const TensorT<S> total = sum_all(tape, weights);
  if (!(total.values[0] > S(0)))
    throw NumericError("attribute_pool: non-positive weight sum (degenerate group)");
  const TensorT<S> weighted = matmul(tape, weights, embeddings);
  return mul(tape, weighted, reciprocal(tape, total));
}

template <class S>
struct LevelAttentionResult {
  TensorT<S> weights;  // [1 x L]
  TensorT<S> overall;  // [1 x d]
};

// Cluster weights via a separately parameterized activation unit, softmax
// over the clusters, overall representation x = sum_l w_l c_l.
template <class S>
LevelAttentionResult<S> level_attention_and_overall(TapeT<S>& tape, const ActUnitT<S>& unit,
                                                    const TensorT<S>& clusters,
                                                    const TensorT<S>& target) {
  LevelAttentionResult<S> out;
  TensorT<S> sc = act_unit_scores(tape, unit, clusters, target);
  sc = reshape(tape, sc, {1, clusters.rows()});
  out.weights = masked_softmax(tape, sc);
  out.overall = matmul(tape, out.weights, clusters);
  return out;
}

// Gated-recurrent-unit hidden states, h_0 = 0; padded steps copy the
// previous state.
template <class S>
TensorT<S> gru_extract(TapeT<S>& tape, const GruT<S>& gru, const TensorT<S>& behaviors,
                       const std::vector<std::uint8_t>& mask) {
  const int t_len = behaviors.rows(), d = behaviors.cols();
  if (gru.Wz.rows() != d || gru.Wz.cols() != d)
    throw ShapeError("gru_extract: weight shape " + shape_str(gru.Wz.shape) +
                     " does not match input dim " + std::to_string(d));
  if (static_cast<int>(mask.size()) != t_len)
    throw ShapeError("gru_extract: mask length does not match sequence length");
  TensorT<S> ones = TensorT<S>::zeros({1, d});
  for (S& v : ones.values) v = S(1);
  TensorT<S> h = TensorT<S>::zeros({1, d});
  std::vector<TensorT<S>> states;
  states.reserve(t_len);
  for (int t = 0; t < t_len; ++t) {
    if (!mask[t]) {
      states.push_back(h);
      continue;
    }
    const TensorT<S> x = gather_rows(tape, behaviors, {t});
    const TensorT<S> z =
        sigmoid(tape, add(tape, add(tape, matmul(tape, x, gru.Wz), matmul(tape, h, gru.Uz)), gru.bz));
    const TensorT<S> r =
        sigmoid(tape, add(tape, add(tape, matmul(tape, x, gru.Wr), matmul(tape, h, gru.Ur)), gru.br));
    const TensorT<S> cand = tanh_op(
        tape,
        add(tape, add(tape, matmul(tape, x, gru.Wh), matmul(tape, mul(tape, r, h), gru.Uh)), gru.bh));
    h = add(tape, mul(tape, sub(tape, ones, z), h), mul(tape, z, cand));
    states.push_back(h);
  }
  return stack_rows(tape, states);
}

enum class ItemFeatureKind { pooled, gru };

// Softmax-pooled behaviors over all unmasked positions (raw level-1 scores),
// or an attention-weighted sum of GRU hidden states.
template <class S>
TensorT<S> item_level_feature(TapeT<S>& tape, DhanParamsT<S>& params, const TensorT<S>& behaviors,
                              const TensorT<S>& target, const std::vector<std::uint8_t>& mask,
                              ItemFeatureKind kind) {
  if (kind == ItemFeatureKind::pooled) {
    const TensorT<S> raw = act_unit_scores(tape, params.level1, behaviors, target);
    const TensorT<S> row = reshape(tape, raw, {1, behaviors.rows()});
    const TensorT<S> w = masked_softmax(tape, row, mask);
    return matmul(tape, w, behaviors);
  }
  const TensorT<S> states = gru_extract(tape, params.gru, behaviors, mask);
  const TensorT<S> sc = act_unit_scores(tape, params.gru_unit, states, target);
  const TensorT<S> row = reshape(tape, sc, {1, states.rows()});
  const TensorT<S> w = masked_softmax(tape, row, mask);
  return matmul(tape, w, states);
}

// ---------------------------------------------------------------------------
// Forward passes

namespace detail {

template <class S>
TensorT<S> const_row(const std::vector<S>& v) {
  return TensorT<S>::from({1, static_cast<int>(v.size())}, v);
}

// One dimension's tower: leaf clusters from grouped item weights, then
// attention level by attention level up to the dimension's overall x.
template <class S>
TensorT<S> dimension_tower(TapeT<S>& tape, DhanParamsT<S>& params, size_t dim_index,
                           const DimensionTree& tree, const TensorT<S>& behaviors,
                           const TensorT<S>& target, const ItemAttentionResult<S>& level1,
                           const GroupedBehaviors& leaf_groups, TraceDim<S>* trace) {
  const std::vector<ActUnitT<S>>& units = params.dim_units[dim_index];
  const size_t n_levels = tree.levels.size();
  if (trace) {
    trace->name = tree.dimension;
    trace->levels.resize(n_levels);
    for (size_t j = 0; j < n_levels; ++j) trace->levels[j].key = tree.levels[j].key;
  }

  // Leaf clusters: normalized weighted sums of item embeddings per group.
  std::vector<TensorT<S>> clusters;
  const int attr_key_count = static_cast<int>(params.config.attr_keys.size());
  for (size_t gi = 0; gi < leaf_groups.groups.size(); ++gi) {
    const Group& g = leaf_groups.groups[gi];
    const TensorT<S> embs = gather_rows(tape, behaviors, g.positions);
    TensorT<S> c = attribute_pool(tape, level1.group_weights[gi], embs);
    if (params.config.attr_embedding) {
      int key_index = 0;
      for (int k = 0; k < attr_key_count; ++k)
        if (params.config.attr_keys[k] == tree.levels[0].key) key_index = k;
      c = add(tape, c, gather_rows(tape, params.attr_emb[key_index], {g.attr}));
    }
    clusters.push_back(std::move(c));
    if (trace) {
      TraceGroup<S> tg;
      tg.attr = g.attr;
      tg.positions = g.positions;
      tg.item_weights = level1.group_weights[gi].values;
      tg.cluster = clusters.back().values;
      trace->levels[0].groups.push_back(std::move(tg));
    }
  }

  // Upward through the attribute levels: unit j scores level-j clusters
  // within their parent groups (the top level has a single virtual parent).
  TensorT<S> x;
  std::vector<TensorT<S>> current = std::move(clusters);
  for (size_t j = 0; j < n_levels; ++j) {
    const bool top = j + 1 == n_levels;
    const int n_parents = top ? 1 : static_cast<int>(tree.levels[j + 1].groups.size());
    std::vector<std::vector<int>> buckets(n_parents);
    for (size_t gi = 0; gi < current.size(); ++gi) {
      const int p = top ? 0 : tree.levels[j].parent[gi];
      buckets[p].push_back(static_cast<int>(gi));
    }
    std::vector<TensorT<S>> next;
    std::vector<std::vector<S>> local_weights(current.size());
    for (int p = 0; p < n_parents; ++p) {
      std::vector<TensorT<S>> rows;
      for (int gi : buckets[p]) rows.push_back(current[gi]);
      const TensorT<S> stacked = stack_rows(tape, rows);
      const LevelAttentionResult<S> att =
          level_attention_and_overall(tape, units[j], stacked, target);
      for (size_t bi = 0; bi < buckets[p].size(); ++bi)
        local_weights[buckets[p][bi]] = {att.weights.values[bi]};
      next.push_back(att.overall);
    }
    if (trace) {
      for (size_t gi = 0; gi < current.size(); ++gi)
        trace->levels[j].groups[gi].local_weight = local_weights[gi][0];
      if (!top) {
        for (size_t pi = 0; pi < tree.levels[j + 1].groups.size(); ++pi) {
          TraceGroup<S> tg;
          tg.attr = tree.levels[j + 1].groups[pi].attr;
          tg.positions = tree.levels[j + 1].groups[pi].positions;
          tg.cluster = next[pi].values;
          trace->levels[j + 1].groups.push_back(std::move(tg));
        }
      }
    }
    if (top) x = next[0];
    current = std::move(next);
  }

  if (trace) {
    // Effective weights: product of local weights down from the top.
    for (size_t j = n_levels; j-- > 0;) {
      TraceLevel<S>& lvl = trace->levels[j];
      for (size_t gi = 0; gi < lvl.groups.size(); ++gi) {
        const bool top = j + 1 == n_levels;
        const S parent_eff =
            top ? S(1) : trace->levels[j + 1].groups[tree.levels[j].parent[gi]].effective_weight;
        lvl.groups[gi].effective_weight = lvl.groups[gi].local_weight * parent_eff;
      }
    }
    trace->x = x.values;
  }
  return x;
}

}  // namespace detail

// Single-sample logits [1 x 2]; fills the trace when given.
template <class S>
TensorT<S> forward_sample(TapeT<S>& tape, DhanParamsT<S>& params, const Sample& sample,
                          ForwardTrace<S>* trace = nullptr) {
  const ModelConfig& cfg = params.config;
  if (static_cast<int>(sample.history_items.size()) != cfg.t_max)
    throw ShapeError("forward: sample history length " +
                     std::to_string(sample.history_items.size()) + " does not match t_max " +
                     std::to_string(cfg.t_max));
  if (sample.history_attrs.size() != cfg.attr_keys.size())
    throw ShapeError("forward: sample has " + std::to_string(sample.history_attrs.size()) +
                     " attribute sequences, config expects " + std::to_string(cfg.attr_keys.size()));

  const TensorT<S> behaviors = gather_rows(tape, params.item_emb, sample.history_items);
  const TensorT<S> target = gather_rows(tape, params.item_emb, {sample.target_item});

  std::vector<TensorT<S>> features;

  switch (cfg.variant) {
    case Variant::dhan:
    case Variant::dhan_gru: {
      const std::vector<DimensionTree> trees = build_tree(sample, cfg.hierarchy, cfg.attr_keys);
      if (trace) trace->dims.resize(trees.size());
      for (size_t di = 0; di < trees.size(); ++di) {
        GroupedBehaviors leaf;
        leaf.groups = trees[di].levels[0].groups;
        const ItemAttentionResult<S> level1 =
            item_attention(tape, params.level1, behaviors, target, leaf);
        if (trace && di == 0) trace->raw_scores = level1.raw_scores.values;
        features.push_back(detail::dimension_tower(tape, params, di, trees[di], behaviors, target,
                                                   level1, leaf,
                                                   trace ? &trace->dims[di] : nullptr));
      }
      const ItemFeatureKind kind =
          cfg.variant == Variant::dhan ? ItemFeatureKind::pooled : ItemFeatureKind::gru;
      const TensorT<S> i_x = item_level_feature(tape, params, behaviors, target, sample.mask, kind);
      if (trace) trace->i_x = i_x.values;
      features.push_back(i_x);
      features.push_back(target);
      break;
    }
    case Variant::din: {
      const TensorT<S> raw = act_unit_scores(tape, params.level1, behaviors, target);
      std::vector<S> m(sample.mask.begin(), sample.mask.end());
      const TensorT<S> mask_row = detail::const_row<S>(m);
      const TensorT<S> weights =
          mul(tape, reshape(tape, raw, {1, behaviors.rows()}), mask_row);
      const TensorT<S> pooled = matmul(tape, weights, behaviors);
      if (trace) {
        trace->raw_scores = raw.values;
        trace->pooled = pooled.values;
      }
      features.push_back(pooled);
      features.push_back(target);
      break;
    }
    case Variant::wdl:
    case Variant::pnn: {
      int count = 0;
      for (std::uint8_t m : sample.mask) count += m;
      if (count == 0) throw NumericError("forward: sample has an empty history");
      const TensorT<S> summed = masked_sum_rows(tape, behaviors, sample.mask);
      const TensorT<S> pooled = scale(tape, summed, S(1) / static_cast<S>(count));
      if (trace) trace->pooled = pooled.values;
      features.push_back(pooled);
      features.push_back(target);
      if (cfg.variant == Variant::pnn) {
        const TensorT<S> inner =
            reshape(tape, sum_all(tape, mul(tape, pooled, target)), {1, 1});
        if (trace) trace->pnn_inner = inner.values[0];
        features.push_back(inner);
      }
      break;
    }
  }

  const TensorT<S> X = concat_cols(tape, features);
  TensorT<S> logits = mlp_apply(tape, params.head, X);

  if (cfg.variant == Variant::wdl) {
    TensorT<S> wide = gather_rows(tape, params.wide_user, {sample.user});
    wide = add(tape, wide, gather_rows(tape, params.wide_item, {sample.target_item}));
    for (size_t k = 0; k < params.wide_attr.size(); ++k)
      wide = add(tape, wide, gather_rows(tape, params.wide_attr[k], {sample.target_attrs[k]}));
    const TensorT<S> zero = TensorT<S>::zeros({1, 1});
    logits = add(tape, logits, concat_cols(tape, {zero, wide}));
    if (trace) trace->wide_logit = wide.values[0];
  }

  if (trace) trace->X = X.values;
  return logits;
}

// Batched probabilities p [B]; per-sample traces are filled when requested.
template <class S>
TensorT<S> forward_batch(TapeT<S>& tape, DhanParamsT<S>& params, std::span<const Sample> batch,
                         std::vector<ForwardTrace<S>>* traces = nullptr) {
  if (batch.empty()) throw ContractError("forward_batch: empty batch");
  if (traces) traces->assign(batch.size(), ForwardTrace<S>{});
  std::vector<TensorT<S>> logits;
  logits.reserve(batch.size());
  for (size_t i = 0; i < batch.size(); ++i)
    logits.push_back(forward_sample(tape, params, batch[i], traces ? &(*traces)[i] : nullptr));
  const TensorT<S> stacked = logits.size() == 1 ? logits[0] : stack_rows(tape, logits);
  TensorT<S> p = binary_softmax_prob(tape, stacked);
  if (traces)
    for (size_t i = 0; i < batch.size(); ++i) {
      (*traces)[i].p = p.values[i];
      // softmax of the raw scores over unmasked positions, for reporting
      if (!(*traces)[i].raw_scores.empty()) {
        const std::vector<S>& raw = (*traces)[i].raw_scores;
        const std::vector<std::uint8_t>& mask = batch[i].mask;
        S mx = -std::numeric_limits<S>::infinity();
        for (size_t t = 0; t < raw.size(); ++t)
          if (mask[t]) mx = std::max(mx, raw[t]);
        S denom = S(0);
        for (size_t t = 0; t < raw.size(); ++t)
          if (mask[t]) denom += std::exp(raw[t] - mx);
        (*traces)[i].global_weights.assign(raw.size(), S(0));
        if (denom > S(0))
          for (size_t t = 0; t < raw.size(); ++t)
            if (mask[t]) (*traces)[i].global_weights[t] = std::exp(raw[t] - mx) / denom;
      }
    }
  return p;
}

}  // namespace dhan
