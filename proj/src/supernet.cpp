#include "ofalab/supernet.hpp"

#include <cmath>
#include <cstring>

#include "ofalab/errors.hpp"
#include "ofalab/gemm.hpp"

namespace ofalab {

namespace {

void acc_into(Tensor& dst, const Tensor& src) {
  require_shape(src, dst.shape, "gradient accumulate");
  for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

// first `rows` filters of a [C,1,K,K] kernel bank
Tensor slice_rows(const Tensor& t, int rows) {
  Tensor out({rows, t.shape[1], t.shape[2], t.shape[3]});
  std::memcpy(out.data.data(), t.data.data(), out.data.size() * sizeof(float));
  return out;
}

void add_rows_into(Tensor& dst, const Tensor& rows_grad, int rows) {
  const size_t n = static_cast<size_t>(rows) * dst.shape[1] * dst.shape[2] * dst.shape[3];
  for (size_t i = 0; i < n; ++i) dst.data[i] += rows_grad.data[i];
}

// center crop of each [K,K] filter flattened to rows [c, kc*kc]
std::vector<float> crop_rows(const Tensor& bank, int k_from, int k_to) {
  const int c = bank.shape[0], off = (k_from - k_to) / 2;
  std::vector<float> out(static_cast<size_t>(c) * k_to * k_to);
  for (int ci = 0; ci < c; ++ci) {
    const float* src = bank.data.data() + static_cast<size_t>(ci) * k_from * k_from;
    float* dst = out.data() + static_cast<size_t>(ci) * k_to * k_to;
    for (int i = 0; i < k_to; ++i)
      for (int j = 0; j < k_to; ++j) dst[i * k_to + j] = src[(i + off) * k_from + (j + off)];
  }
  return out;
}

void scatter_rows_add(float* bank, int c, int k_from, int k_to, const float* rows) {
  const int off = (k_from - k_to) / 2;
  for (int ci = 0; ci < c; ++ci) {
    float* dst = bank + static_cast<size_t>(ci) * k_from * k_from;
    const float* src = rows + static_cast<size_t>(ci) * k_to * k_to;
    for (int i = 0; i < k_to; ++i)
      for (int j = 0; j < k_to; ++j) dst[(i + off) * k_from + (j + off)] += src[i * k_to + j];
  }
}

}  // namespace

// ---- parameter store -------------------------------------------------------

std::vector<std::pair<std::string, Param*>> Supernet::named_params() {
  std::vector<std::pair<std::string, Param*>> out;
  out.emplace_back("stem.w", &stem);
  out.emplace_back("stem.bn.gamma", &stem_bn.gamma);
  out.emplace_back("stem.bn.beta", &stem_bn.beta);
  for (size_t b = 0; b < blocks.size(); ++b) {
    for (size_t l = 0; l < blocks[b].size(); ++l) {
      const std::string p = "b" + std::to_string(b) + ".l" + std::to_string(l) + ".";
      LayerParams& lp = blocks[b][l];
      out.emplace_back(p + "expand", &lp.expand);
      out.emplace_back(p + "bn1.gamma", &lp.bn1.gamma);
      out.emplace_back(p + "bn1.beta", &lp.bn1.beta);
      out.emplace_back(p + "dw", &lp.dw);
      out.emplace_back(p + "bn2.gamma", &lp.bn2.gamma);
      out.emplace_back(p + "bn2.beta", &lp.bn2.beta);
      out.emplace_back(p + "t5", &lp.t5);
      out.emplace_back(p + "t3", &lp.t3);
      out.emplace_back(p + "project", &lp.project);
      out.emplace_back(p + "bn3.gamma", &lp.bn3.gamma);
      out.emplace_back(p + "bn3.beta", &lp.bn3.beta);
    }
  }
  out.emplace_back("fc.w", &fc_w);
  out.emplace_back("fc.b", &fc_b);
  return out;
}

std::vector<std::pair<std::string, BNState*>> Supernet::named_bn() {
  std::vector<std::pair<std::string, BNState*>> out;
  out.emplace_back("stem.bn", &stem_bn);
  for (size_t b = 0; b < blocks.size(); ++b)
    for (size_t l = 0; l < blocks[b].size(); ++l) {
      const std::string p = "b" + std::to_string(b) + ".l" + std::to_string(l) + ".";
      out.emplace_back(p + "bn1", &blocks[b][l].bn1);
      out.emplace_back(p + "bn2", &blocks[b][l].bn2);
      out.emplace_back(p + "bn3", &blocks[b][l].bn3);
    }
  return out;
}

std::vector<Param*> Supernet::all_params() {
  std::vector<Param*> out;
  for (auto& [name, p] : named_params()) out.push_back(p);
  return out;
}

int64_t Supernet::param_element_count() {
  int64_t n = 0;
  for (Param* p : all_params()) n += static_cast<int64_t>(p->value.data.size());
  return n;
}

void Supernet::zero_grads() {
  for (Param* p : all_params()) p->zero_grad();
}

Supernet build_supernet(const ArchSpec& arch, uint64_t seed) {
  arch.validate();
  Supernet net;
  net.arch = arch;
  Rng rng = substream(seed, "init");
  auto he_fill = [&rng](Param& p, int fan_in) {
    const double std = std::sqrt(2.0 / fan_in);
    for (float& v : p.value.data) v = static_cast<float>(rng.normal(0.0, std));
  };

  net.stem = Param({arch.stem_channels, arch.input_channels, 3, 3});
  he_fill(net.stem, arch.input_channels * 9);
  net.stem_bn = BNState(arch.stem_channels);

  net.blocks.resize(arch.num_blocks());
  for (int b = 0; b < arch.num_blocks(); ++b) {
    net.blocks[b].resize(arch.max_depth);
    for (int l = 0; l < arch.max_depth; ++l) {
      LayerParams& lp = net.blocks[b][l];
      lp.in_ch = arch.layer_in(b, l);
      lp.out_ch = arch.block_out[b];
      lp.stride = arch.layer_stride(b, l);
      lp.hid_max = arch.max_width() * lp.in_ch;
      lp.residual = lp.stride == 1 && lp.in_ch == lp.out_ch;
      lp.expand = Param({lp.hid_max, lp.in_ch, 1, 1});
      he_fill(lp.expand, lp.in_ch);
      lp.bn1 = BNState(lp.hid_max);
      lp.dw = Param({lp.hid_max, 1, 7, 7});
      he_fill(lp.dw, 49);
      lp.bn2 = BNState(lp.hid_max);
      lp.t5 = Param({25, 25});
      for (int i = 0; i < 25; ++i) lp.t5.value.data[i * 25 + i] = 1.0f;
      lp.t3 = Param({9, 9});
      for (int i = 0; i < 9; ++i) lp.t3.value.data[i * 9 + i] = 1.0f;
      lp.project = Param({lp.out_ch, lp.hid_max, 1, 1});
      he_fill(lp.project, lp.hid_max);
      lp.bn3 = BNState(lp.out_ch);
    }
  }

  net.fc_w = Param({arch.num_classes, arch.block_out.back()});
  he_fill(net.fc_w, arch.block_out.back());
  net.fc_b = Param({arch.num_classes}, /*wd_exempt=*/true);
  return net;
}

// ---- kernel derivation -----------------------------------------------------

Tensor derive_kernel(const Tensor& full7, int k, const Tensor& t5, const Tensor& t3) {
  if (full7.shape.size() != 4 || full7.shape[1] != 1 || full7.shape[2] != 7 ||
      full7.shape[3] != 7)
    throw ConfigError("derive_kernel: expected [c,1,7,7], got " + full7.shape_str());
  if (k == 7) return full7;
  if (k != 3 && k != 5) throw ConfigError("derive_kernel: k must be 3, 5 or 7");
  require_shape(t5, {25, 25}, "derive_kernel t5");
  const int c = full7.shape[0];
  // rows [c,25] = center crops; derived5 = rows * T5^T
  std::vector<float> v25 = crop_rows(full7, 7, 5);
  Tensor d5({c, 1, 5, 5});
  gemm_nt(d5.data.data(), v25.data(), t5.data.data(), c, 25, 25);
  if (k == 5) return d5;
  require_shape(t3, {9, 9}, "derive_kernel t3");
  std::vector<float> v9 = crop_rows(d5, 5, 3);
  Tensor d3({c, 1, 3, 3});
  gemm_nt(d3.data.data(), v9.data(), t3.data.data(), c, 9, 9);
  return d3;
}

void derive_kernel_backward(const Tensor& full7, int k, const Tensor& t5, const Tensor& t3,
                            const Tensor& grad_derived, Tensor& grad_full7, Tensor& grad_t5,
                            Tensor& grad_t3) {
  const int c = full7.shape[0];
  require_shape(grad_full7, full7.shape, "derive_kernel_backward grad_full7");
  require_shape(grad_derived, {c, 1, k, k}, "derive_kernel_backward grad_derived");
  if (k == 7) {
    acc_into(grad_full7, grad_derived);
    return;
  }
  std::vector<float> v25 = crop_rows(full7, 7, 5);  // [c,25]
  std::vector<float> g25(static_cast<size_t>(c) * 25);
  if (k == 5) {
    std::memcpy(g25.data(), grad_derived.data.data(), g25.size() * sizeof(float));
  } else {
    // recompute derived5 to get the T3 input
    Tensor d5({c, 1, 5, 5});
    gemm_nt(d5.data.data(), v25.data(), t5.data.data(), c, 25, 25);
    std::vector<float> v9 = crop_rows(d5, 5, 3);
    // dT3 += g3^T * v9 ; dV9 = g3 * T3
    gemm_tn(grad_t3.data.data(), grad_derived.data.data(), v9.data(), 9, 9, c,
            /*accumulate=*/true);
    std::vector<float> g9(static_cast<size_t>(c) * 9);
    gemm_nn(g9.data(), grad_derived.data.data(), t3.data.data(), c, 9, 9);
    scatter_rows_add(g25.data(), c, 5, 3, g9.data());
  }
  // dT5 += g25^T * v25 ; dV25 = g25 * T5
  gemm_tn(grad_t5.data.data(), g25.data(), v25.data(), 25, 25, c, /*accumulate=*/true);
  std::vector<float> gv25(static_cast<size_t>(c) * 25);
  gemm_nn(gv25.data(), g25.data(), t5.data.data(), c, 25, 25);
  scatter_rows_add(grad_full7.data.data(), c, 7, 5, gv25.data());
}

// ---- subnet resolution -----------------------------------------------------

std::vector<ActiveLayer> active_layers(const ArchSpec& a, const SubnetConfig& c) {
  validate_config(a, c);
  std::vector<ActiveLayer> out;
  for (int b = 0; b < a.num_blocks(); ++b) {
    for (int l = 0; l < c.depth[b]; ++l) {
      ActiveLayer al;
      al.b = b;
      al.l = l;
      al.in = a.layer_in(b, l);
      al.out = a.block_out[b];
      al.hid = c.width[b][l] * al.in;
      al.k = c.kernel[b][l];
      al.stride = a.layer_stride(b, l);
      al.pad = al.k / 2;
      al.residual = al.stride == 1 && al.in == al.out;
      out.push_back(al);
    }
  }
  return out;
}

// ---- forward / backward ----------------------------------------------------

namespace {

void calib_push(CalibAccum* calib, const CmBNCache& cache) {
  if (!calib) return;
  if (calib->cursor == calib->nodes.size()) calib->nodes.emplace_back();
  CalibAccum::Node& node = calib->nodes[calib->cursor++];
  const size_t c = cache.mean.size();
  if (node.sum_mean.empty()) {
    node.sum_mean.assign(c, 0.0);
    node.sum_sq.assign(c, 0.0);
  } else if (node.sum_mean.size() != c) {
    throw ConfigError("calibration accumulator channel mismatch (config changed mid-stream?)");
  }
  const double cnt = static_cast<double>(cache.count);
  for (size_t i = 0; i < c; ++i) {
    node.sum_mean[i] += cnt * cache.mean[i];
    node.sum_sq[i] += cnt * (static_cast<double>(cache.var[i]) +
                             static_cast<double>(cache.mean[i]) * cache.mean[i]);
  }
  node.count += cache.count;
}

}  // namespace

Tensor supernet_forward(Supernet& net, const SubnetConfig& cfg, const Tensor& x_nchw,
                        RunMode mode, Rng* dropout_rng, SupernetTape* tape, CalibAccum* calib) {
  const ArchSpec& a = net.arch;
  const std::vector<ActiveLayer> layers = active_layers(a, cfg);
  if (x_nchw.shape.size() != 4 || x_nchw.shape[1] != a.input_channels ||
      x_nchw.shape[2] != a.input_hw || x_nchw.shape[3] != a.input_hw)
    throw ConfigError("supernet_forward: input " + x_nchw.shape_str() + " does not match arch (" +
                      std::to_string(a.input_channels) + "x" + std::to_string(a.input_hw) + "x" +
                      std::to_string(a.input_hw) + ")");
  const bool train = mode == RunMode::kTrain;
  if (train && a.dropout > 0.0f && !dropout_rng)
    throw ConfigError("supernet_forward: train mode needs a dropout rng");
  if (calib && mode != RunMode::kCalibrate)
    throw ConfigError("supernet_forward: calibration accumulator requires calibrate mode");
  if (calib) calib->cursor = 0;
  if (tape) {
    tape->cfg = cfg;
    tape->layers.clear();
    tape->layers.reserve(layers.size());
  }

  Tensor x0 = nchw_to_cnhw(x_nchw);
  Tensor stem_pre = cm_stem_forward(x0, net.stem.value, 1, 1);
  CmBNCache stem_cache;
  Tensor cur = cm_bn_forward(stem_pre, net.stem_bn, mode,
                             (tape || calib) ? &stem_cache : nullptr, /*fuse_relu=*/true);
  calib_push(calib, stem_cache);
  if (tape) {
    tape->x0 = std::move(x0);
    tape->stem_pre = std::move(stem_pre);
    tape->stem_cache = stem_cache;
    tape->stem_out = cur;  // keep a copy: it is layer 0's input
  }

  for (const ActiveLayer& al : layers) {
    LayerParams& lp = net.blocks[al.b][al.l];
    Tensor full7 = slice_rows(lp.dw.value, al.hid);
    Tensor kd = derive_kernel(full7, al.k, lp.t5.value, lp.t3.value);

    Tensor h1 = cm_pw_forward(cur, lp.expand.value, al.hid, al.in);
    CmBNCache c1, c2, c3;
    const bool want_cache = tape || calib;
    Tensor y1 = cm_bn_forward(h1, lp.bn1, mode, want_cache ? &c1 : nullptr, true);
    calib_push(calib, c1);
    Tensor h2 = cm_dw_forward(y1, kd, al.stride, al.pad);
    Tensor y2 = cm_bn_forward(h2, lp.bn2, mode, want_cache ? &c2 : nullptr, true);
    calib_push(calib, c2);
    Tensor h3 = cm_pw_forward(y2, lp.project.value, al.out, al.hid);
    Tensor z = cm_bn_forward(h3, lp.bn3, mode, want_cache ? &c3 : nullptr, false);
    calib_push(calib, c3);
    if (al.residual) cm_add(z, cur);

    if (tape) {
      SupernetTape::LayerTape lt;
      lt.kd = std::move(kd);
      lt.h1 = std::move(h1);
      lt.y1 = std::move(y1);
      lt.h2 = std::move(h2);
      lt.y2 = std::move(y2);
      lt.h3 = std::move(h3);
      lt.out = std::move(z);
      lt.c1 = std::move(c1);
      lt.c2 = std::move(c2);
      lt.c3 = std::move(c3);
      tape->layers.push_back(std::move(lt));
      cur = tape->layers.back().out;  // copy: next layer's input
    } else {
      cur = std::move(z);
    }
  }

  Tensor feat = cm_gap(cur);
  std::vector<uint8_t> mask;
  Rng dummy(0);
  Tensor dropped = dropout_forward(feat, a.dropout, train ? Mode::kTrain : Mode::kEval,
                                   dropout_rng ? *dropout_rng : dummy, &mask);
  Tensor logits = dense_forward(dropped, net.fc_w.value, net.fc_b.value);
  if (tape) {
    tape->feat = std::move(feat);
    tape->dropped = std::move(dropped);
    tape->drop_mask = std::move(mask);
  }
  return logits;
}

void supernet_backward(Supernet& net, const SubnetConfig& cfg, const Tensor& grad_logits,
                       const SupernetTape& tape) {
  const ArchSpec& a = net.arch;
  if (!(tape.cfg == cfg))
    throw ConfigError("supernet_backward: tape was recorded for a different config");
  const std::vector<ActiveLayer> layers = active_layers(a, cfg);
  if (tape.layers.size() != layers.size())
    throw ConfigError("supernet_backward: tape layer count mismatch");

  DenseGrads dg = dense_backward(tape.dropped, net.fc_w.value, grad_logits);
  acc_into(net.fc_w.grad, dg.grad_weight);
  acc_into(net.fc_b.grad, dg.grad_bias);
  Tensor gfeat = dropout_backward(dg.grad_input, a.dropout, tape.drop_mask);
  const Tensor& last_out = layers.empty() ? tape.stem_out : tape.layers.back().out;
  Tensor gx = cm_gap_backward(last_out, gfeat);

  for (size_t i = layers.size(); i-- > 0;) {
    const ActiveLayer& al = layers[i];
    LayerParams& lp = net.blocks[al.b][al.l];
    const SupernetTape::LayerTape& lt = tape.layers[i];
    const Tensor& x_in = i == 0 ? tape.stem_out : tape.layers[i - 1].out;

    Tensor gh3 = cm_bn_backward(lt.h3, lt.h3, gx, lp.bn3, lt.c3, /*fused_relu=*/false);
    Tensor gy2 = cm_pw_backward(lt.y2, lp.project.value, gh3, al.out, al.hid, lp.project.grad);
    Tensor gh2 = cm_bn_backward(lt.h2, lt.y2, gy2, lp.bn2, lt.c2, true);

    Tensor gy1, gkd;
    cm_dw_backward(lt.y1, lt.kd, gh2, al.stride, al.pad, gy1, gkd);
    Tensor full7 = slice_rows(lp.dw.value, al.hid);
    Tensor gfull7(full7.shape);
    derive_kernel_backward(full7, al.k, lp.t5.value, lp.t3.value, gkd, gfull7, lp.t5.grad,
                           lp.t3.grad);
    add_rows_into(lp.dw.grad, gfull7, al.hid);

    Tensor gh1 = cm_bn_backward(lt.h1, lt.y1, gy1, lp.bn1, lt.c1, true);
    Tensor gx_in = cm_pw_backward(x_in, lp.expand.value, gh1, al.hid, al.in, lp.expand.grad);
    if (al.residual) cm_add(gx_in, gx);  // identity branch of the residual
    gx = std::move(gx_in);
  }

  Tensor gstem_pre =
      cm_bn_backward(tape.stem_pre, tape.stem_out, gx, net.stem_bn, tape.stem_cache, true);
  Tensor gstem = cm_stem_grad_weight(tape.x0, net.stem.value, gstem_pre, 1, 1);
  acc_into(net.stem.grad, gstem);
}

}  // namespace ofalab
