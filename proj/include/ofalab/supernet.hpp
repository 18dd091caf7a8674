#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ofalab/arch.hpp"
#include "ofalab/batchops.hpp"
#include "ofalab/ops.hpp"
#include "ofalab/optim.hpp"
#include "ofalab/tensor.hpp"

namespace ofalab {

// One inverted-residual layer's shared parameter store, sized for the
// maximal width. Subnets use leading slices: expand rows [0,hid), depthwise
// rows [0,hid) (then kernel-derived via T5/T3), project columns [0,hid).
struct LayerParams {
  int in_ch = 0, out_ch = 0, stride = 1, hid_max = 0;
  bool residual = false;  // stride 1 and in == out
  Param expand;           // [hid_max, in_ch, 1, 1]
  BNState bn1;            // hid_max
  Param dw;               // [hid_max, 1, 7, 7]
  BNState bn2;            // hid_max
  Param t5;               // [25, 25] kernel transform 7->5, shared across channels
  Param t3;               // [9, 9] kernel transform 5->3
  Param project;          // [out_ch, hid_max, 1, 1]
  BNState bn3;            // out_ch
};

struct Supernet {
  ArchSpec arch;
  Param stem;  // [stem_channels, input_channels, 3, 3]
  BNState stem_bn;
  std::vector<std::vector<LayerParams>> blocks;  // [num_blocks][max_depth]
  Param fc_w;  // [num_classes, last_block_out]
  Param fc_b;  // [num_classes]

  // Fixed enumeration order used by the optimizer, gradient combination and
  // the checkpoint writer.
  std::vector<std::pair<std::string, Param*>> named_params();
  std::vector<std::pair<std::string, BNState*>> named_bn();
  std::vector<Param*> all_params();
  int64_t param_element_count();  // trainable elements (incl. transforms, BN affine)
  void zero_grads();
};

// He fan-in init for conv/dense weights, BN gamma=1 beta=0, T5/T3 identity;
// deterministic for a fixed seed (draws from the "init" substream).
Supernet build_supernet(const ArchSpec& arch, uint64_t seed);

// Kernel derivation: k=7 passes through; k=5 multiplies the flattened center
// 5x5 crop by T5; k=3 further crops the derived 5x5 and multiplies by T3.
// full7 is [c,1,7,7]; result [c,1,k,k].
Tensor derive_kernel(const Tensor& full7, int k, const Tensor& t5, const Tensor& t3);

// Chain rule through derive_kernel: accumulates into grad_full7 ([c,1,7,7]),
// grad_t5 and grad_t3.
void derive_kernel_backward(const Tensor& full7, int k, const Tensor& t5, const Tensor& t3,
                            const Tensor& grad_derived, Tensor& grad_full7, Tensor& grad_t5,
                            Tensor& grad_t3);

// Resolved geometry of one active layer of a subnet.
struct ActiveLayer {
  int b = 0, l = 0;
  int in = 0, out = 0, hid = 0, k = 3, stride = 1, pad = 1;
  bool residual = false;
};

std::vector<ActiveLayer> active_layers(const ArchSpec& a, const SubnetConfig& c);

// Per-BN-node pooled statistics accumulated while streaming calibration
// batches (count-weighted mean / biased variance).
struct CalibAccum {
  struct Node {
    std::vector<double> sum_mean;  // sum over batches of count * mean
    std::vector<double> sum_sq;    // sum of count * (var + mean^2)
    int64_t count = 0;
  };
  std::vector<Node> nodes;  // traversal order: stem BN, then bn1/bn2/bn3 per active layer
  size_t cursor = 0;        // reset at each forward
};

struct SupernetTape {
  SubnetConfig cfg;
  Tensor x0;  // stem input [Cin,N,H,W]
  Tensor stem_pre, stem_out;
  CmBNCache stem_cache;
  struct LayerTape {
    Tensor kd;              // derived depthwise kernel [hid,1,k,k]
    Tensor h1, y1;          // expand pre-BN / post-BN-ReLU
    Tensor h2, y2;          // depthwise pre-BN / post-BN-ReLU
    Tensor h3;              // project pre-BN
    Tensor out;             // layer output (post-residual), next layer's input
    CmBNCache c1, c2, c3;
  };
  std::vector<LayerTape> layers;
  Tensor feat, dropped;  // [N, C_last]
  std::vector<uint8_t> drop_mask;
};

// Runs the derived subnet on a [N,C,H,W] batch; returns logits [N,classes].
// kTrain requires dropout_rng and fills the tape (when given); kCalibrate
// uses batch BN statistics without touching running stats and reports them
// into `calib`; kEval uses running stats, dropout off.
Tensor supernet_forward(Supernet& net, const SubnetConfig& cfg, const Tensor& x_nchw,
                        RunMode mode, Rng* dropout_rng = nullptr, SupernetTape* tape = nullptr,
                        CalibAccum* calib = nullptr);

// Accumulates gradients of the active slices (and T5/T3) into the shared
// Params; inactive regions receive exactly zero.
void supernet_backward(Supernet& net, const SubnetConfig& cfg, const Tensor& grad_logits,
                       const SupernetTape& tape);

}  // namespace ofalab
