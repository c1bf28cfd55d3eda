#include "stark/model.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "stark/prep.hpp"
#include "stark/rng.hpp"

namespace stark {

using nd::Array;
using nd::Shape;
using nd::Var;

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

const char* kEncoderStreams[4] = {"body", "left", "right", "face"};
const char* kDecodeStreams[4] = {"fuse", "left", "right", "body"};

// [T, Ps, 3] -> [3, T, Ps], plain data movement.
Array to_channel_major(const Array& stream) {
  const int T = stream.shape[0], P = stream.shape[1], C = stream.shape[2];
  Array out({C, T, P});
  for (int t = 0; t < T; ++t)
    for (int p = 0; p < P; ++p)
      for (int c = 0; c < C; ++c)
        out[(static_cast<int64_t>(c) * T + t) * P + p] =
            stream[(static_cast<int64_t>(t) * P + p) * C + c];
  return out;
}

}  // namespace

StarkModel::StarkModel(ModelConfig cfg, StreamLayout layout, int vocab_size)
    : cfg_(std::move(cfg)), layout_(std::move(layout)), vocab_size_(vocab_size) {
  cfg_.validate();
  layout_.validate();
  if (vocab_size_ < 1) fail("model: vocabulary must contain at least one gloss");

  auto add = [&](std::string name, Shape shape, bool trainable) {
    ParamSlot slot;
    slot.name = std::move(name);
    slot.value = Array::zeros(shape);
    if (trainable) {
      slot.m = Array::zeros(shape);
      slot.v = Array::zeros(shape);
    }
    slot.trainable = trainable;
    slots_.push_back(std::move(slot));
    return slots_.size() - 1;
  };

  const int S = cfg_.heads, Cp = cfg_.head_dim, k = cfg_.kernel, e = cfg_.ffn_expansion;
  for (int s = 0; s < 4; ++s) {
    const std::string prefix = std::string("enc.") + kEncoderStreams[s] + ".";
    const int P = static_cast<int>(layout_.stream(s).size());
    add(prefix + "stem.w", {cfg_.input_channels, cfg_.stem_channels}, true);
    add(prefix + "stem.b", {cfg_.stem_channels}, true);
    int c_in = cfg_.stem_channels;
    for (size_t m = 0; m < cfg_.module_channels.size(); ++m) {
      const int c_out = cfg_.module_channels[m];
      const std::string mp = prefix + "mod" + std::to_string(m) + ".";
      add(mp + "w_qk", {c_in, 2 * S * Cp}, true);
      add(mp + "b_qk", {2 * S * Cp}, true);
      add(mp + "alpha", {S, P}, true);
      add(mp + "beta", {S, P}, true);
      add(mp + "gamma", {S, P}, true);
      add(mp + "delta", {S, P}, true);
      add(mp + "w_out", {S * c_in, c_out}, true);
      add(mp + "b_out", {c_out}, true);
      add(mp + "w_res1", {c_in, c_out}, true);
      add(mp + "b_res1", {c_out}, true);
      add(mp + "w_res2", {c_in, c_out}, true);
      add(mp + "b_res2", {c_out}, true);
      add(mp + "w_ffn1", {c_out, e * c_out}, true);
      add(mp + "b_ffn1", {e * c_out}, true);
      add(mp + "w_ffn2", {e * c_out, c_out}, true);
      add(mp + "b_ffn2", {c_out}, true);
      c_in = c_out;
      (void)k;
    }
  }

  const auto widths = decoding_stream_widths(encoder_dim());
  const int hidden = cfg_.decoder_hidden, ffn = cfg_.decoder_ffn, v1 = vocab_size_ + 1;
  for (int h = 0; h < 4; ++h) {
    const std::string prefix = std::string("head.") + kDecodeStreams[h] + ".";
    add(prefix + "w_in", {widths[static_cast<size_t>(h)], hidden}, true);
    add(prefix + "b_in", {hidden}, true);
    add(prefix + "norm_scale", {hidden}, true);
    add(prefix + "norm_shift", {hidden}, true);
    add(prefix + "w_ffn1", {hidden, ffn}, true);
    add(prefix + "b_ffn1", {ffn}, true);
    add(prefix + "w_ffn2", {ffn, hidden}, true);
    add(prefix + "b_ffn2", {hidden}, true);
    add(prefix + "w_cls", {hidden, v1}, true);
    add(prefix + "b_cls", {v1}, true);
    running_mean_ix_[static_cast<size_t>(h)] = add(prefix + "running_mean", {hidden}, false);
    running_var_ix_[static_cast<size_t>(h)] = add(prefix + "running_var", {hidden}, false);
    for (int64_t i = 0; i < hidden; ++i)
      slots_[running_var_ix_[static_cast<size_t>(h)]].value[i] = 1.0;
  }
}

void StarkModel::init_params(uint64_t seed) {
  Rng rng = derived_rng({seed, 0x57a6cull});
  for (ParamSlot& slot : slots_) {
    const std::string& n = slot.name;
    auto ends_with = [&](const char* suffix) {
      const size_t len = std::char_traits<char>::length(suffix);
      return n.size() >= len && n.compare(n.size() - len, len, suffix) == 0;
    };
    if (!slot.trainable) {
      // Fresh running statistics: standard normal assumption.
      const double fill = ends_with("running_var") ? 1.0 : 0.0;
      for (int64_t i = 0; i < slot.value.size(); ++i) slot.value[i] = fill;
      continue;
    }
    for (int64_t i = 0; i < slot.m.size(); ++i) slot.m[i] = 0.0;
    for (int64_t i = 0; i < slot.v.size(); ++i) slot.v[i] = 0.0;
    if (ends_with("alpha") || ends_with("gamma") || ends_with("norm_scale")) {
      for (int64_t i = 0; i < slot.value.size(); ++i) slot.value[i] = 1.0;
    } else if (slot.value.shape.size() == 2) {
      // Weight matrices [fan_in, fan_out]: variance 1/fan_in.
      const double stddev = 1.0 / std::sqrt(static_cast<double>(slot.value.shape[0]));
      for (int64_t i = 0; i < slot.value.size(); ++i) slot.value[i] = rng.normal(0, stddev);
    } else {
      // Biases, beta/delta, norm_shift.
      for (int64_t i = 0; i < slot.value.size(); ++i) slot.value[i] = 0.0;
    }
  }
}

BoundModel StarkModel::bind(nd::Tape& tape) const {
  std::vector<Var> leaves;
  for (const ParamSlot& slot : slots_)
    if (slot.trainable) leaves.push_back(tape.leaf(slot.value));
  return assemble(leaves);
}

BoundModel StarkModel::assemble(const std::vector<Var>& leaves) const {
  BoundModel bm;
  size_t cursor = 0;
  auto next = [&]() {
    if (cursor >= leaves.size()) fail("model: parameter walk needs more leaves");
    Var v = leaves[cursor];
    bm.param_nodes.push_back(v.node);
    ++cursor;
    return v;
  };

  bm.encoders.resize(4);
  for (int s = 0; s < 4; ++s) {
    StreamEncoderParams& enc = bm.encoders[static_cast<size_t>(s)];
    enc.stem.w = next();
    enc.stem.b = next();
    for (size_t m = 0; m < cfg_.module_channels.size(); ++m) {
      AttentionParams mp;
      mp.kernel = cfg_.kernel;
      mp.w_qk = next();
      mp.b_qk = next();
      mp.alpha = next();
      mp.beta = next();
      mp.gamma = next();
      mp.delta = next();
      mp.w_out = next();
      mp.b_out = next();
      mp.w_res1 = next();
      mp.b_res1 = next();
      mp.w_res2 = next();
      mp.b_res2 = next();
      mp.w_ffn1 = next();
      mp.b_ffn1 = next();
      mp.w_ffn2 = next();
      mp.b_ffn2 = next();
      enc.modules.push_back(std::move(mp));
    }
  }
  for (int h = 0; h < 4; ++h) {
    HeadParams& hp = bm.heads[static_cast<size_t>(h)];
    hp.w_in = next();
    hp.b_in = next();
    hp.norm_scale = next();
    hp.norm_shift = next();
    hp.w_ffn1 = next();
    hp.b_ffn1 = next();
    hp.w_ffn2 = next();
    hp.b_ffn2 = next();
    hp.w_cls = next();
    hp.b_cls = next();
    hp.running_mean = &slots_[running_mean_ix_[static_cast<size_t>(h)]].value;
    hp.running_var = &slots_[running_var_ix_[static_cast<size_t>(h)]].value;
  }
  if (cursor != leaves.size()) fail("model: more leaves than trainable slots");
  return bm;
}

std::array<Var, 4> StarkModel::forward(const BoundModel& bm, const Array& frames,
                                       bool training,
                                       std::array<HeadStats, 4>* stats) const {
  if (frames.shape.size() != 3 || frames.shape[2] != 3)
    fail("model: frames must be [T, P, 3]");
  if (frames.shape[1] != layout_.points)
    fail("model: frames have " + std::to_string(frames.shape[1]) +
         " keypoints, layout expects " + std::to_string(layout_.points));

  const auto streams = split_streams(frames, layout_);
  std::array<Var, 4> encoded;
  for (int s = 0; s < 4; ++s)
    encoded[static_cast<size_t>(s)] =
        encoder_forward(nd::constant(to_channel_major(streams[static_cast<size_t>(s)])),
                        bm.encoders[static_cast<size_t>(s)], cfg_.leaky_slope);

  const StreamBundle bundle = fuse_streams(encoded);
  std::array<Var, 4> logits;
  for (int h = 0; h < 4; ++h)
    logits[static_cast<size_t>(h)] =
        head_forward(bundle.stream(h), bm.heads[static_cast<size_t>(h)], training,
                     cfg_.leaky_slope,
                     stats ? &(*stats)[static_cast<size_t>(h)] : nullptr);
  return logits;
}

void StarkModel::update_running_stats(const std::array<HeadStats, 4>& stats,
                                      double momentum) {
  if (momentum < 0 || momentum > 1) fail("model: momentum must lie in [0, 1]");
  for (int h = 0; h < 4; ++h) {
    Array& mean = slots_[running_mean_ix_[static_cast<size_t>(h)]].value;
    Array& var = slots_[running_var_ix_[static_cast<size_t>(h)]].value;
    const HeadStats& st = stats[static_cast<size_t>(h)];
    if (st.mean.shape != mean.shape || st.var.shape != var.shape)
      fail("model: head statistics shape mismatch");
    for (int64_t i = 0; i < mean.size(); ++i) {
      mean[i] = (1 - momentum) * mean[i] + momentum * st.mean[i];
      var[i] = (1 - momentum) * var[i] + momentum * st.var[i];
    }
  }
}

int StarkModel::encoder_dim() const {
  return cfg_.module_channels.empty() ? cfg_.stem_channels : cfg_.module_channels.back();
}

uint64_t StarkModel::fingerprint() const {
  // Canonical text of everything that fixes array shapes and meaning.
  char buf[256];
  std::string s = "arch;in=" + std::to_string(cfg_.input_channels) +
                  ";stem=" + std::to_string(cfg_.stem_channels) + ";mods=";
  for (size_t i = 0; i < cfg_.module_channels.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(cfg_.module_channels[i]);
  }
  std::snprintf(buf, sizeof buf, ";S=%d;Cp=%d;k=%d;e=%d;slope=%.17g;dh=%d;dffn=%d",
                cfg_.heads, cfg_.head_dim, cfg_.kernel, cfg_.ffn_expansion,
                cfg_.leaky_slope, cfg_.decoder_hidden, cfg_.decoder_ffn);
  s += buf;
  s += ";layout=" + std::to_string(layout_.points);
  for (int st = 0; st < 4; ++st) {
    s += ';';
    s += layout_.stream_name(st);
    s += '=';
    const auto& ix = layout_.stream(st);
    for (size_t i = 0; i < ix.size(); ++i) {
      if (i) s += ',';
      s += std::to_string(ix[i]);
    }
  }
  s += ";vocab=" + std::to_string(vocab_size_);
  return fnv1a(s);
}

CheckpointState StarkModel::to_checkpoint(const std::string& config_text, int64_t epoch,
                                          int64_t step, uint64_t seed,
                                          double best_dev_wer) const {
  CheckpointState state;
  state.fingerprint = fingerprint();
  state.config_text = config_text;
  state.epoch = epoch;
  state.step = step;
  state.seed = seed;
  state.best_dev_wer = best_dev_wer;
  for (const ParamSlot& slot : slots_) {
    if (slot.trainable) {
      state.arrays.push_back({slot.name, CheckpointArray::Kind::param, slot.value.clone()});
      state.arrays.push_back({slot.name, CheckpointArray::Kind::adam_m, slot.m.clone()});
      state.arrays.push_back({slot.name, CheckpointArray::Kind::adam_v, slot.v.clone()});
    } else {
      state.arrays.push_back({slot.name, CheckpointArray::Kind::buffer, slot.value.clone()});
    }
  }
  return state;
}

void StarkModel::restore(const CheckpointState& state) {
  if (state.fingerprint != fingerprint())
    throw std::runtime_error("checkpoint fingerprint does not match this architecture");
  size_t cursor = 0;
  auto take = [&](const std::string& name, CheckpointArray::Kind kind,
                  const Shape& shape) -> const Array& {
    if (cursor >= state.arrays.size())
      throw std::runtime_error("checkpoint is missing arrays (stops before " + name + ")");
    const CheckpointArray& a = state.arrays[cursor++];
    if (a.name != name || a.kind != kind)
      throw std::runtime_error("checkpoint array order mismatch: expected " + name +
                               ", found " + a.name);
    if (a.value.shape != shape)
      throw std::runtime_error("checkpoint array " + name + " has the wrong shape");
    return a.value;
  };
  for (ParamSlot& slot : slots_) {
    if (slot.trainable) {
      slot.value = take(slot.name, CheckpointArray::Kind::param, slot.value.shape).clone();
      slot.m = take(slot.name, CheckpointArray::Kind::adam_m, slot.m.shape).clone();
      slot.v = take(slot.name, CheckpointArray::Kind::adam_v, slot.v.shape).clone();
    } else {
      slot.value = take(slot.name, CheckpointArray::Kind::buffer, slot.value.shape).clone();
    }
  }
  if (cursor != state.arrays.size())
    throw std::runtime_error("checkpoint contains unexpected extra arrays");
}

int64_t StarkModel::trainable_parameter_count() const {
  int64_t total = 0;
  for (const ParamSlot& slot : slots_)
    if (slot.trainable) total += slot.value.size();
  return total;
}

}  // namespace stark
