#include "rndiff/vit.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "json.hpp"

namespace rndiff {

void check_vit_config(const ViTConfig& cfg) {
  if (cfg.input_side <= 0 || cfg.patch_side <= 0)
    throw std::invalid_argument("vit: input_side and patch_side must be positive");
  if (cfg.input_side % cfg.patch_side != 0)
    throw std::invalid_argument("vit: patch_side must divide input_side");
  if (cfg.in_channels != 1 && cfg.in_channels != 2)
    throw std::invalid_argument("vit: in_channels must be 1 or 2");
  if (cfg.embed_dim <= 0 || cfg.heads <= 0 || cfg.embed_dim % cfg.heads != 0)
    throw std::invalid_argument("vit: heads must divide embed_dim");
  if (cfg.depth <= 0) throw std::invalid_argument("vit: depth must be positive");
  if (!(cfg.mlp_ratio > 0.0))
    throw std::invalid_argument("vit: mlp_ratio must be positive");
  if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0))
    throw std::invalid_argument("vit: dropout must be in [0,1)");
  if (cfg.num_classes < 2)
    throw std::invalid_argument("vit: num_classes must be at least 2");
  if (cfg.proj_dim <= 0)
    throw std::invalid_argument("vit: proj_dim must be positive");
}

std::string vit_config_to_json(const ViTConfig& cfg) {
  nlohmann::ordered_json j;
  j["input_side"] = cfg.input_side;
  j["in_channels"] = cfg.in_channels;
  j["patch_side"] = cfg.patch_side;
  j["embed_dim"] = cfg.embed_dim;
  j["depth"] = cfg.depth;
  j["heads"] = cfg.heads;
  j["mlp_ratio"] = cfg.mlp_ratio;
  j["dropout"] = cfg.dropout;
  j["num_classes"] = cfg.num_classes;
  j["proj_dim"] = cfg.proj_dim;
  return j.dump();
}

ViTConfig vit_config_from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  ViTConfig cfg;
  cfg.input_side = j.at("input_side").get<int>();
  cfg.in_channels = j.at("in_channels").get<int>();
  cfg.patch_side = j.at("patch_side").get<int>();
  cfg.embed_dim = j.at("embed_dim").get<int>();
  cfg.depth = j.at("depth").get<int>();
  cfg.heads = j.at("heads").get<int>();
  cfg.mlp_ratio = j.at("mlp_ratio").get<double>();
  cfg.dropout = j.at("dropout").get<double>();
  cfg.num_classes = j.at("num_classes").get<int>();
  cfg.proj_dim = j.at("proj_dim").get<int>();
  check_vit_config(cfg);
  return cfg;
}

namespace {

Tensor normal_param(Shape shape, SplitMix64& rng, double sigma = 0.02) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.normal(0.0, sigma);
  return make_tensor(std::move(shape), std::move(v), true);
}

Tensor const_param(Shape shape, double fill) {
  return make_tensor(std::move(shape), fill, true);
}

}  // namespace

ViTParams init_vit_params(const ViTConfig& cfg, SplitMix64& rng) {
  check_vit_config(cfg);
  const int D = cfg.embed_dim;
  const int P = cfg.patch_vec();
  const int H = cfg.mlp_hidden();
  ViTParams p;
  p.cfg = cfg;
  p.patch_embed_w = normal_param({P, D}, rng);
  p.patch_embed_b = const_param({D}, 0.0);
  p.cls_token = normal_param({1, 1, D}, rng);
  p.pos_embed = normal_param({1, cfg.n_tokens(), D}, rng);
  p.blocks.resize(cfg.depth);
  for (auto& b : p.blocks) {
    b.ln1_g = const_param({D}, 1.0);
    b.ln1_b = const_param({D}, 0.0);
    b.qkv_w = normal_param({D, 3 * D}, rng);
    b.qkv_b = const_param({3 * D}, 0.0);
    b.attn_out_w = normal_param({D, D}, rng);
    b.attn_out_b = const_param({D}, 0.0);
    b.ln2_g = const_param({D}, 1.0);
    b.ln2_b = const_param({D}, 0.0);
    b.mlp_w1 = normal_param({D, H}, rng);
    b.mlp_b1 = const_param({H}, 0.0);
    b.mlp_w2 = normal_param({H, D}, rng);
    b.mlp_b2 = const_param({D}, 0.0);
  }
  p.ln_f_g = const_param({D}, 1.0);
  p.ln_f_b = const_param({D}, 0.0);
  p.head_w = normal_param({D, cfg.num_classes}, rng);
  p.head_b = const_param({cfg.num_classes}, 0.0);
  p.recon_w = normal_param({D, P}, rng);
  p.recon_b = const_param({P}, 0.0);
  p.proj_w1 = normal_param({D, D}, rng);
  p.proj_b1 = const_param({D}, 0.0);
  p.proj_w2 = normal_param({D, cfg.proj_dim}, rng);
  p.proj_b2 = const_param({cfg.proj_dim}, 0.0);
  return p;
}

std::vector<std::pair<std::string, Tensor>> ViTParams::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(10 + blocks.size() * 12);
  out.emplace_back("patch_embed.w", patch_embed_w);
  out.emplace_back("patch_embed.b", patch_embed_b);
  out.emplace_back("cls_token", cls_token);
  out.emplace_back("pos_embed", pos_embed);
  char name[64];
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    const std::pair<const char*, Tensor> fields[] = {
        {"ln1.g", b.ln1_g},       {"ln1.b", b.ln1_b},
        {"qkv.w", b.qkv_w},       {"qkv.b", b.qkv_b},
        {"attn_out.w", b.attn_out_w}, {"attn_out.b", b.attn_out_b},
        {"ln2.g", b.ln2_g},       {"ln2.b", b.ln2_b},
        {"mlp.w1", b.mlp_w1},     {"mlp.b1", b.mlp_b1},
        {"mlp.w2", b.mlp_w2},     {"mlp.b2", b.mlp_b2},
    };
    for (const auto& [suffix, t] : fields) {
      std::snprintf(name, sizeof name, "blocks.%zu.%s", i, suffix);
      out.emplace_back(name, t);
    }
  }
  out.emplace_back("ln_f.g", ln_f_g);
  out.emplace_back("ln_f.b", ln_f_b);
  out.emplace_back("head.w", head_w);
  out.emplace_back("head.b", head_b);
  out.emplace_back("recon.w", recon_w);
  out.emplace_back("recon.b", recon_b);
  out.emplace_back("proj.w1", proj_w1);
  out.emplace_back("proj.b1", proj_b1);
  out.emplace_back("proj.w2", proj_w2);
  out.emplace_back("proj.b2", proj_b2);
  return out;
}

std::vector<Tensor> ViTParams::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

ViTParams vit_params_from_list(const ViTConfig& cfg,
                               const std::vector<Tensor>& list) {
  check_vit_config(cfg);
  const std::size_t expect = 10 + static_cast<std::size_t>(cfg.depth) * 12 + 4;
  if (list.size() != expect)
    throw std::invalid_argument("vit: parameter list has " +
                                std::to_string(list.size()) + " tensors, expected " +
                                std::to_string(expect));
  std::size_t k = 0;
  auto next = [&] { return list[k++]; };
  ViTParams p;
  p.cfg = cfg;
  p.patch_embed_w = next();
  p.patch_embed_b = next();
  p.cls_token = next();
  p.pos_embed = next();
  p.blocks.resize(cfg.depth);
  for (auto& b : p.blocks) {
    b.ln1_g = next();
    b.ln1_b = next();
    b.qkv_w = next();
    b.qkv_b = next();
    b.attn_out_w = next();
    b.attn_out_b = next();
    b.ln2_g = next();
    b.ln2_b = next();
    b.mlp_w1 = next();
    b.mlp_b1 = next();
    b.mlp_w2 = next();
    b.mlp_b2 = next();
  }
  p.ln_f_g = next();
  p.ln_f_b = next();
  p.head_w = next();
  p.head_b = next();
  p.recon_w = next();
  p.recon_b = next();
  p.proj_w1 = next();
  p.proj_b1 = next();
  p.proj_w2 = next();
  p.proj_b2 = next();
  return p;
}

void save_vit_checkpoint(const ViTParams& params, const std::string& stem,
                         std::uint64_t master_seed, std::uint64_t step) {
  save_checkpoint(stem, params.named_parameters(), master_seed, step,
                  vit_config_to_json(params.cfg));
}

void check_vit_arch_match(const ViTConfig& stored, const ViTConfig& want) {
  auto mismatch = [](const char* field, double want_v, double got_v) {
    char msg[160];
    std::snprintf(msg, sizeof msg,
                  "checkpoint mismatch: %s is %g but the configured model wants %g",
                  field, got_v, want_v);
    throw std::runtime_error(msg);
  };
  if (stored.in_channels != want.in_channels)
    mismatch("channel count", want.in_channels, stored.in_channels);
  if (stored.patch_side != want.patch_side)
    mismatch("patch_side", want.patch_side, stored.patch_side);
  if (stored.input_side != want.input_side)
    mismatch("input_side", want.input_side, stored.input_side);
  if (stored.embed_dim != want.embed_dim)
    mismatch("embed_dim", want.embed_dim, stored.embed_dim);
  if (stored.depth != want.depth) mismatch("depth", want.depth, stored.depth);
  if (stored.heads != want.heads) mismatch("heads", want.heads, stored.heads);
  if (stored.num_classes != want.num_classes)
    mismatch("num_classes", want.num_classes, stored.num_classes);
  if (stored.proj_dim != want.proj_dim)
    mismatch("proj_dim", want.proj_dim, stored.proj_dim);
}

ViTParams clone_vit_params(const ViTParams& src) {
  std::vector<Tensor> copies;
  for (auto& [name, t] : src.named_parameters())
    copies.push_back(make_tensor(t->shape, t->values, true));
  return vit_params_from_list(src.cfg, copies);
}

ViTParams load_vit_checkpoint(const std::string& stem, const ViTConfig& expect) {
  check_vit_config(expect);
  Checkpoint ck = load_checkpoint(stem);
  ViTConfig stored = vit_config_from_json(ck.config_json);
  check_vit_arch_match(stored, expect);

  SplitMix64 throwaway(0);
  ViTParams ref = init_vit_params(stored, throwaway);
  std::vector<Tensor> list;
  for (auto& [name, shaped] : ref.named_parameters()) {
    const Tensor& found = ck.find(name);
    if (found->shape != shaped->shape)
      throw std::runtime_error("checkpoint tensor " + name + " has shape " +
                               shape_str(found->shape) + ", expected " +
                               shape_str(shaped->shape));
    list.push_back(found);
  }
  ViTParams loaded = vit_params_from_list(stored, list);
  loaded.cfg = stored;
  return loaded;
}

std::vector<double> patchify(const ChannelStack& x, int patch_side) {
  const int S = x.dims[0];
  if (x.dims[1] != S || x.dims[2] != S)
    throw std::invalid_argument("patchify: input must be a cube");
  if (patch_side <= 0 || S % patch_side != 0)
    throw std::invalid_argument("patchify: patch_side must divide the cube side");
  const int G = S / patch_side;
  const int C = x.channels;
  const std::size_t pvox =
      static_cast<std::size_t>(patch_side) * patch_side * patch_side;
  const std::size_t pvec = static_cast<std::size_t>(C) * pvox;
  std::vector<double> out(static_cast<std::size_t>(G) * G * G * pvec);
  std::size_t patch = 0;
  for (int pz = 0; pz < G; ++pz)
    for (int py = 0; py < G; ++py)
      for (int px = 0; px < G; ++px, ++patch) {
        double* dst = out.data() + patch * pvec;
        for (int c = 0; c < C; ++c)
          for (int vz = 0; vz < patch_side; ++vz)
            for (int vy = 0; vy < patch_side; ++vy)
              for (int vx = 0; vx < patch_side; ++vx)
                *dst++ = x.at(c, px * patch_side + vx, py * patch_side + vy,
                              pz * patch_side + vz);
      }
  return out;
}

ChannelStack unpatchify(const std::vector<double>& tokens, const ViTConfig& cfg) {
  check_vit_config(cfg);
  const int S = cfg.input_side;
  const int G = cfg.grid_side();
  const int C = cfg.in_channels;
  const int ps = cfg.patch_side;
  const std::size_t pvec = static_cast<std::size_t>(cfg.patch_vec());
  if (tokens.size() != static_cast<std::size_t>(cfg.n_patches()) * pvec)
    throw std::invalid_argument("unpatchify: token buffer has wrong length");
  ChannelStack out;
  out.channels = C;
  out.dims = {S, S, S};
  out.values.resize(static_cast<std::size_t>(C) * S * S * S);
  const std::size_t nvox = out.voxel_count();
  std::size_t patch = 0;
  for (int pz = 0; pz < G; ++pz)
    for (int py = 0; py < G; ++py)
      for (int px = 0; px < G; ++px, ++patch) {
        const double* src = tokens.data() + patch * pvec;
        for (int c = 0; c < C; ++c)
          for (int vz = 0; vz < ps; ++vz)
            for (int vy = 0; vy < ps; ++vy)
              for (int vx = 0; vx < ps; ++vx) {
                const std::size_t x = static_cast<std::size_t>(px) * ps + vx;
                const std::size_t y = static_cast<std::size_t>(py) * ps + vy;
                const std::size_t z = static_cast<std::size_t>(pz) * ps + vz;
                out.values[c * nvox + x + static_cast<std::size_t>(S) * (y + static_cast<std::size_t>(S) * z)] = *src++;
              }
      }
  return out;
}

Tensor patchify_batch(const std::vector<const ChannelStack*>& batch,
                      const ViTConfig& cfg) {
  check_vit_config(cfg);
  if (batch.empty()) throw std::invalid_argument("patchify_batch: empty batch");
  const int N = cfg.n_patches();
  const int P = cfg.patch_vec();
  std::vector<double> values;
  values.reserve(batch.size() * static_cast<std::size_t>(N) * P);
  for (const ChannelStack* s : batch) {
    if (!s) throw std::invalid_argument("patchify_batch: null sample");
    if (s->channels != cfg.in_channels)
      throw std::invalid_argument("patchify_batch: channel count mismatch");
    if (s->dims[0] != cfg.input_side || s->dims[1] != cfg.input_side ||
        s->dims[2] != cfg.input_side)
      throw std::invalid_argument("patchify_batch: volume side mismatch");
    std::vector<double> one = patchify(*s, cfg.patch_side);
    values.insert(values.end(), one.begin(), one.end());
  }
  return make_tensor({static_cast<int>(batch.size()), N, P}, std::move(values));
}

namespace {

Tensor split_heads(const Tensor& t, int B, int T, int H, int hd) {
  return reshape(permute(reshape(t, {B, T, H, hd}), {0, 2, 1, 3}), {B * H, T, hd});
}

}  // namespace

ViTOutput vit_forward(const ViTParams& params, const Tensor& patches,
                      bool training, SplitMix64* dropout_rng,
                      AttentionTrace* capture) {
  const ViTConfig& cfg = params.cfg;
  const int N = cfg.n_patches();
  const int T = cfg.n_tokens();
  const int D = cfg.embed_dim;
  const int H = cfg.heads;
  const int hd = cfg.head_dim();
  if (!patches || patches->shape.size() != 3 || patches->shape[1] != N ||
      patches->shape[2] != cfg.patch_vec())
    throw std::invalid_argument(
        "vit_forward: patches must be (batch, " + std::to_string(N) + ", " +
        std::to_string(cfg.patch_vec()) + "), got " +
        (patches ? shape_str(patches->shape) : std::string("null")));
  const int B = patches->shape[0];
  const bool use_drop = training && cfg.dropout > 0.0;
  if (use_drop && !dropout_rng)
    throw std::invalid_argument("vit_forward: dropout requires an rng");

  Tensor x = add(matmul(patches, params.patch_embed_w), params.patch_embed_b);
  Tensor cls = broadcast_to(params.cls_token, {B, 1, D});
  x = concat({cls, x}, 1);
  x = add(x, params.pos_embed);
  if (use_drop) x = dropout(x, cfg.dropout, *dropout_rng);

  if (capture) {
    capture->batch = B;
    capture->heads = H;
    capture->tokens = T;
    capture->layers.clear();
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  for (const ViTBlockParams& blk : params.blocks) {
    Tensor h = layer_norm(x, blk.ln1_g, blk.ln1_b);
    Tensor qkv = add(matmul(h, blk.qkv_w), blk.qkv_b);
    Tensor q = split_heads(slice(qkv, 2, 0, D), B, T, H, hd);
    Tensor k = split_heads(slice(qkv, 2, D, D), B, T, H, hd);
    Tensor v = split_heads(slice(qkv, 2, 2 * D, D), B, T, H, hd);
    Tensor attn = softmax(mul_scalar(matmul(q, permute(k, {0, 2, 1})), scale), 2);
    if (capture) capture->layers.push_back(attn->values);
    Tensor o = matmul(attn, v);
    o = reshape(permute(reshape(o, {B, H, T, hd}), {0, 2, 1, 3}), {B, T, D});
    o = add(matmul(o, blk.attn_out_w), blk.attn_out_b);
    if (use_drop) o = dropout(o, cfg.dropout, *dropout_rng);
    x = add(x, o);

    Tensor m = layer_norm(x, blk.ln2_g, blk.ln2_b);
    m = gelu(add(matmul(m, blk.mlp_w1), blk.mlp_b1));
    m = add(matmul(m, blk.mlp_w2), blk.mlp_b2);
    if (use_drop) m = dropout(m, cfg.dropout, *dropout_rng);
    x = add(x, m);
  }

  x = layer_norm(x, params.ln_f_g, params.ln_f_b);
  ViTOutput out;
  out.cls_embed = reshape(slice(x, 1, 0, 1), {B, D});
  out.patch_tokens = slice(x, 1, 1, N);
  out.logits = add(matmul(out.cls_embed, params.head_w), params.head_b);
  return out;
}

Tensor vit_reconstruct(const ViTParams& params, const Tensor& patch_tokens) {
  return add(matmul(patch_tokens, params.recon_w), params.recon_b);
}

Tensor vit_project(const ViTParams& params, const Tensor& cls_embed) {
  Tensor h = gelu(add(matmul(cls_embed, params.proj_w1), params.proj_b1));
  return add(matmul(h, params.proj_w2), params.proj_b2);
}

std::vector<double> rollout_patch_weights(const AttentionTrace& trace,
                                          int batch_index) {
  if (trace.layers.empty())
    throw std::invalid_argument("attention rollout: empty trace");
  if (batch_index < 0 || batch_index >= trace.batch)
    throw std::invalid_argument("attention rollout: batch index out of range");
  const int T = trace.tokens;
  std::vector<double> rolling(static_cast<std::size_t>(T) * T, 0.0);
  for (int i = 0; i < T; ++i) rolling[static_cast<std::size_t>(i) * T + i] = 1.0;
  std::vector<double> layer(static_cast<std::size_t>(T) * T);
  std::vector<double> next(static_cast<std::size_t>(T) * T);
  for (std::size_t l = 0; l < trace.layers.size(); ++l) {
    // Head-averaged attention, identity added, rows renormalized.
    for (int r = 0; r < T; ++r) {
      double row_sum = 0.0;
      for (int c = 0; c < T; ++c) {
        double a = 0.0;
        for (int h = 0; h < trace.heads; ++h)
          a += trace.at(static_cast<int>(l), batch_index, h, r, c);
        a /= trace.heads;
        if (r == c) a += 1.0;
        layer[static_cast<std::size_t>(r) * T + c] = a;
        row_sum += a;
      }
      for (int c = 0; c < T; ++c)
        layer[static_cast<std::size_t>(r) * T + c] /= row_sum;
    }
    // Composition across depth: this layer acts on the product so far.
    for (int r = 0; r < T; ++r)
      for (int c = 0; c < T; ++c) {
        double s = 0.0;
        for (int m = 0; m < T; ++m)
          s += layer[static_cast<std::size_t>(r) * T + m] *
               rolling[static_cast<std::size_t>(m) * T + c];
        next[static_cast<std::size_t>(r) * T + c] = s;
      }
    rolling.swap(next);
  }
  std::vector<double> weights(static_cast<std::size_t>(T) - 1);
  double total = 0.0;
  for (int c = 1; c < T; ++c) {
    weights[c - 1] = rolling[c];
    total += rolling[c];
  }
  if (!(total > 0.0))
    throw std::invalid_argument("attention rollout: degenerate class-token row");
  for (double& w : weights) w /= total;
  return weights;
}

Volume3D attention_rollout(const AttentionTrace& trace, const ViTConfig& cfg,
                           const Volume3D& like, int batch_index) {
  check_vit_config(cfg);
  if (trace.tokens != cfg.n_tokens())
    throw std::invalid_argument("attention rollout: trace token count does not match config");
  if (like.dims[0] != cfg.input_side || like.dims[1] != cfg.input_side ||
      like.dims[2] != cfg.input_side)
    throw std::invalid_argument("attention rollout: reference grid side mismatch");
  std::vector<double> weights = rollout_patch_weights(trace, batch_index);
  Volume3D heat = Volume3D::zeros(like.dims, like.spacing);
  heat.orientation = like.orientation;
  heat.origin = like.origin;
  const int G = cfg.grid_side();
  const int ps = cfg.patch_side;
  const double per_voxel_scale =
      1.0 / (static_cast<double>(ps) * ps * ps);
  std::size_t patch = 0;
  for (int pz = 0; pz < G; ++pz)
    for (int py = 0; py < G; ++py)
      for (int px = 0; px < G; ++px, ++patch) {
        const double w = weights[patch] * per_voxel_scale;
        for (int vz = 0; vz < ps; ++vz)
          for (int vy = 0; vy < ps; ++vy)
            for (int vx = 0; vx < ps; ++vx)
              heat.at(px * ps + vx, py * ps + vy, pz * ps + vz) = w;
      }
  return heat;
}

double mask_attention_fraction(const Volume3D& heatmap, const Volume3D& mask) {
  if (!same_grid(heatmap, mask))
    throw std::invalid_argument("mask_attention_fraction: grid mismatch");
  double inside = 0.0, total = 0.0;
  for (std::size_t i = 0; i < heatmap.voxels.size(); ++i) {
    total += heatmap.voxels[i];
    if (mask.voxels[i] > 0.5) inside += heatmap.voxels[i];
  }
  if (!(total > 0.0))
    throw std::invalid_argument("mask_attention_fraction: heatmap has no mass");
  return inside / total;
}

}  // namespace rndiff
