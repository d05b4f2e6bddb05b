#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rndiff/checkpoint.hpp"
#include "rndiff/preprocess.hpp"
#include "rndiff/tensor.hpp"
#include "rndiff/volume.hpp"

namespace rndiff {

struct ViTConfig {
  int input_side = 32;
  int in_channels = 2;
  int patch_side = 8;
  int embed_dim = 64;
  int depth = 4;
  int heads = 4;
  double mlp_ratio = 2.0;
  double dropout = 0.0;
  int num_classes = 2;
  int proj_dim = 32;  // contrastive projection head output width

  int grid_side() const { return input_side / patch_side; }
  int n_patches() const { return grid_side() * grid_side() * grid_side(); }
  int n_tokens() const { return n_patches() + 1; }
  int patch_vec() const {
    return in_channels * patch_side * patch_side * patch_side;
  }
  int head_dim() const { return embed_dim / heads; }
  int mlp_hidden() const {
    return static_cast<int>(embed_dim * mlp_ratio + 0.5);
  }
};

void check_vit_config(const ViTConfig& cfg);
ViTConfig vit_config_from_json(const std::string& json_text);
std::string vit_config_to_json(const ViTConfig& cfg);

struct ViTBlockParams {
  Tensor ln1_g, ln1_b;
  Tensor qkv_w, qkv_b;      // (D, 3D), (3D)
  Tensor attn_out_w, attn_out_b;
  Tensor ln2_g, ln2_b;
  Tensor mlp_w1, mlp_b1;    // (D, H), (H)
  Tensor mlp_w2, mlp_b2;    // (H, D), (D)
};

struct ViTParams {
  ViTConfig cfg;
  Tensor patch_embed_w, patch_embed_b;  // (patch_vec, D), (D)
  Tensor cls_token;                     // (1, 1, D)
  Tensor pos_embed;                     // (1, n_tokens, D)
  std::vector<ViTBlockParams> blocks;
  Tensor ln_f_g, ln_f_b;
  Tensor head_w, head_b;                // (D, num_classes)
  Tensor recon_w, recon_b;              // (D, patch_vec): linear unpatchify
  Tensor proj_w1, proj_b1, proj_w2, proj_b2;  // D -> D -> proj_dim

  /// Every trainable tensor, in the fixed checkpoint order.
  std::vector<Tensor> parameters() const;
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
};

ViTParams init_vit_params(const ViTConfig& cfg, SplitMix64& rng);

/// Rebuilds a ViTParams from a flat tensor list in parameters() order.
ViTParams vit_params_from_list(const ViTConfig& cfg,
                               const std::vector<Tensor>& list);

/// Deep copy with fresh grad-requiring leaves (training mutates in place).
ViTParams clone_vit_params(const ViTParams& src);

void save_vit_checkpoint(const ViTParams& params, const std::string& stem,
                         std::uint64_t master_seed, std::uint64_t step);
/// Loads and validates; in_channels / patch_side mismatches against
/// `expect` raise with a message naming the offending field.
ViTParams load_vit_checkpoint(const std::string& stem, const ViTConfig& expect);

/// Raises when two architectures cannot share weights (channel count,
/// patch_side, or any other shape-determining field differs).
void check_vit_arch_match(const ViTConfig& stored, const ViTConfig& want);

/// Tokenization: patches enumerated x-fastest over the patch grid, each
/// flattened channel-major (c, then voxel x-fastest). Returns N x patch_vec.
std::vector<double> patchify(const ChannelStack& x, int patch_side);
ChannelStack unpatchify(const std::vector<double>& tokens, const ViTConfig& cfg);

/// Stacks per-sample patchify results into a (B, N, patch_vec) leaf tensor.
Tensor patchify_batch(const std::vector<const ChannelStack*>& batch,
                      const ViTConfig& cfg);

/// Softmaxed attention captured per layer during one forward pass,
/// stored (batch, heads, tokens, tokens) row-major per layer.
struct AttentionTrace {
  int batch = 0;
  int heads = 0;
  int tokens = 0;
  std::vector<std::vector<double>> layers;

  double at(int layer, int b, int h, int row, int col) const {
    return layers[layer][((static_cast<std::size_t>(b) * heads + h) * tokens +
                          row) *
                             tokens +
                         col];
  }
};

struct ViTOutput {
  Tensor logits;        // (B, num_classes)
  Tensor cls_embed;     // (B, D) after the final norm
  Tensor patch_tokens;  // (B, N, D) after the final norm
};

/// Full encoder + classifier head. `dropout_rng` may be null when
/// cfg.dropout = 0 or training = false; `capture` may be null.
ViTOutput vit_forward(const ViTParams& params, const Tensor& patches,
                      bool training, SplitMix64* dropout_rng,
                      AttentionTrace* capture);

/// Restoration head: (B, N, D) -> (B, N, patch_vec).
Tensor vit_reconstruct(const ViTParams& params, const Tensor& patch_tokens);
/// Contrastive projection head: (B, D) -> (B, proj_dim).
Tensor vit_project(const ViTParams& params, const Tensor& cls_embed);

/// Identity-augmented attention product; class-token row over patch tokens,
/// renormalized to sum 1. Weights indexed in patch (x-fastest) order.
std::vector<double> rollout_patch_weights(const AttentionTrace& trace,
                                          int batch_index);

/// Patch weights spread uniformly over each patch's voxels on the grid of
/// `like` (dims must equal cfg.input_side cubed); voxel values sum to 1.
Volume3D attention_rollout(const AttentionTrace& trace, const ViTConfig& cfg,
                           const Volume3D& like, int batch_index = 0);

/// Share of heatmap mass inside the mask foreground.
double mask_attention_fraction(const Volume3D& heatmap, const Volume3D& mask);

}  // namespace rndiff
