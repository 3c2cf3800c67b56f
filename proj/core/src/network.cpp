// SPDX-License-Identifier: Apache-2.0
#include "kdnas/network.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "kdnas/error.hpp"
#include "kdnas/io.hpp"
#include "kdnas/layers.hpp"

namespace kdnas {
namespace {

std::string block_prefix(int stage, int layer) { return fmt::format("stage{}.layer{}.", stage, layer); }

void add_norm_shapes(ParameterTable& t, const std::string& name, int channels) {
  t.emplace(name + ".scale", Tensor({channels}));
  t.emplace(name + ".shift", Tensor({channels}));
}

void add_norm_buffers(ParameterTable& t, const std::string& name, int channels) {
  t.emplace(name + ".running_mean", Tensor({channels}));
  t.emplace(name + ".running_var", Tensor({channels}));
}

const Tensor& at(const ParameterTable& t, const std::string& name) {
  auto it = t.find(name);
  if (it == t.end()) throw InternalError("missing tensor '" + name + "'");
  return it->second;
}

Tensor& at(ParameterTable& t, const std::string& name) {
  auto it = t.find(name);
  if (it == t.end()) throw InternalError("missing tensor '" + name + "'");
  return it->second;
}

}  // namespace

StagedNetwork::StagedNetwork(SearchSpaceSpec spec, ArchConfig config, int num_classes)
    : spec_(std::move(spec)), config_(std::move(config)), num_classes_(num_classes) {
  spec_.validate();
  if (num_classes_ < 1) throw ValidationError("num_classes must be >= 1");
  plan_ = plan_network(spec_, config_, spec_.input_shape);
}

ParameterTable StagedNetwork::parameter_shapes(const SearchSpaceSpec& spec, const ArchConfig& config,
                                               int num_classes) {
  const NetworkPlan plan = plan_network(spec, config, spec.input_shape);
  ParameterTable t;
  t.emplace("stem.conv.weight", Tensor({plan.stem_channels, plan.input.channels, 3, 3}));
  add_norm_shapes(t, "stem.bn", plan.stem_channels);
  for (const auto& stage : plan.stages) {
    for (const auto& b : stage) {
      const auto p = block_prefix(b.stage, b.layer);
      t.emplace(p + "conv1.weight", Tensor({b.out_channels, b.in_channels, 3, 3}));
      add_norm_shapes(t, p + "bn1", b.out_channels);
      t.emplace(p + "conv2.weight", Tensor({b.out_channels, b.out_channels, 3, 3}));
      add_norm_shapes(t, p + "bn2", b.out_channels);
      if (b.projection) {
        t.emplace(p + "shortcut.weight", Tensor({b.out_channels, b.in_channels, 1, 1}));
        add_norm_shapes(t, p + "shortcut_bn", b.out_channels);
      }
    }
  }
  t.emplace("head.weight", Tensor({num_classes, plan.feature_channels}));
  t.emplace("head.bias", Tensor({num_classes}));
  return t;
}

ParameterTable StagedNetwork::buffer_shapes(const SearchSpaceSpec& spec, const ArchConfig& config) {
  const NetworkPlan plan = plan_network(spec, config, spec.input_shape);
  ParameterTable t;
  add_norm_buffers(t, "stem.bn", plan.stem_channels);
  for (const auto& stage : plan.stages) {
    for (const auto& b : stage) {
      const auto p = block_prefix(b.stage, b.layer);
      add_norm_buffers(t, p + "bn1", b.out_channels);
      add_norm_buffers(t, p + "bn2", b.out_channels);
      if (b.projection) add_norm_buffers(t, p + "shortcut_bn", b.out_channels);
    }
  }
  return t;
}

StagedNetwork StagedNetwork::build(const SearchSpaceSpec& spec, const ArchConfig& config, int num_classes,
                                   std::uint64_t rng_seed) {
  StagedNetwork net(spec, config, num_classes);
  net.params_ = parameter_shapes(spec, config, num_classes);
  net.buffers_ = buffer_shapes(spec, config);
  std::mt19937_64 rng(rng_seed);
  // Initialization draws follow the lexicographic table order.
  for (auto& [name, t] : net.params_) {
    const auto ends_with = [&](std::string_view suffix) {
      return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (ends_with(".scale")) {
      t.fill(1.0);
    } else if (ends_with(".shift")) {
      t.fill(0.0);
    } else if (name == "head.weight" || name == "head.bias") {
      const double bound = 1.0 / std::sqrt(static_cast<double>(net.plan_.feature_channels));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (auto& v : t.values()) v = u(rng);
    } else {
      // Kaiming normal, fan-out mode.
      const double fan_out = static_cast<double>(t.dim(0)) * t.dim(2) * t.dim(3);
      std::normal_distribution<double> g(0.0, std::sqrt(2.0 / fan_out));
      for (auto& v : t.values()) v = g(rng);
    }
  }
  for (auto& [name, t] : net.buffers_) {
    if (name.ends_with(".running_var")) t.fill(1.0);
  }
  return net;
}

StagedNetwork StagedNetwork::from_state(const SearchSpaceSpec& spec, const ArchConfig& config, int num_classes,
                                        ParameterTable params, ParameterTable buffers) {
  StagedNetwork net(spec, config, num_classes);
  auto check = [](const ParameterTable& expected, const ParameterTable& got, const char* what) {
    if (expected.size() != got.size()) {
      throw ValidationError(fmt::format("{} table has {} tensors, expected {}", what, got.size(), expected.size()));
    }
    for (const auto& [name, t] : expected) {
      auto it = got.find(name);
      if (it == got.end()) throw ValidationError(fmt::format("{} table is missing '{}'", what, name));
      if (it->second.shape() != t.shape()) {
        throw ValidationError(fmt::format("{} '{}' has shape {}, expected {}", what, name,
                                          shape_string(it->second.shape()), shape_string(t.shape())));
      }
    }
  };
  check(parameter_shapes(spec, config, num_classes), params, "parameter");
  check(buffer_shapes(spec, config), buffers, "buffer");
  net.params_ = std::move(params);
  net.buffers_ = std::move(buffers);
  return net;
}

void StagedNetwork::check_input(const Tensor& input) const {
  const auto& in = spec_.input_shape;
  if (input.rank() != 4 || input.dim(1) != in.channels || input.dim(2) != in.height || input.dim(3) != in.width) {
    throw ValidationError(fmt::format("input shape {} does not match (N, {}, {}, {})", shape_string(input.shape()),
                                      in.channels, in.height, in.width));
  }
}

Tensor StagedNetwork::forward(const Tensor& input, Mode mode, ForwardTape* tape) {
  return forward_impl(input, mode, tape, mode == Mode::Train);
}

Tensor StagedNetwork::predict(const Tensor& input) const {
  return const_cast<StagedNetwork*>(this)->forward_impl(input, Mode::Eval, nullptr, false);
}

Tensor StagedNetwork::forward_impl(const Tensor& input, Mode mode, ForwardTape* tape, bool update_stats) {
  check_input(input);
  using namespace layers;
  auto norm = [&](const Tensor& x, const std::string& name, ForwardTape::Norm* cache) {
    NormCache nc;
    Tensor y;
    if (mode == Mode::Train) {
      y = batch_norm_train(x, at(params_, name + ".scale"), at(params_, name + ".shift"),
                           update_stats ? &at(buffers_, name + ".running_mean") : nullptr,
                           update_stats ? &at(buffers_, name + ".running_var") : nullptr, cache ? &nc : nullptr);
    } else {
      y = batch_norm_eval(x, at(params_, name + ".scale"), at(params_, name + ".shift"),
                          at(buffers_, name + ".running_mean"), at(buffers_, name + ".running_var"),
                          cache ? &nc : nullptr);
    }
    if (cache) {
      cache->xhat = std::move(nc.xhat);
      cache->inv_std = std::move(nc.inv_std);
    }
    return y;
  };

  if (tape) {
    tape->mode = mode;
    tape->input = input;
    tape->blocks.assign(plan_.stages.size(), {});
  }
  Tensor x = relu(norm(conv2d(input, at(params_, "stem.conv.weight"), 1, 1), "stem.bn",
                       tape ? &tape->stem_bn : nullptr));
  if (tape) tape->stem_out = x;
  for (const auto& stage : plan_.stages) {
    for (const auto& b : stage) {
      const auto p = block_prefix(b.stage, b.layer);
      ForwardTape::Block* rec = nullptr;
      if (tape) {
        tape->blocks[b.stage].emplace_back();
        rec = &tape->blocks[b.stage].back();
        rec->input = x;
      }
      Tensor r1 = relu(norm(conv2d(x, at(params_, p + "conv1.weight"), b.stride, 1), p + "bn1",
                            rec ? &rec->bn1 : nullptr));
      Tensor sum = norm(conv2d(r1, at(params_, p + "conv2.weight"), 1, 1), p + "bn2", rec ? &rec->bn2 : nullptr);
      if (b.projection) {
        add_inplace(sum, norm(conv2d(x, at(params_, p + "shortcut.weight"), b.stride, 0), p + "shortcut_bn",
                              rec ? &rec->shortcut_bn : nullptr));
      } else {
        add_inplace(sum, match_channels(x, b.out_channels));
      }
      x = relu(sum);
      if (rec) {
        rec->relu1 = std::move(r1);
        rec->output = x;
      }
    }
  }
  Tensor pooled = global_avg_pool(x);
  Tensor logits = linear(pooled, at(params_, "head.weight"), at(params_, "head.bias"));
  if (tape) tape->pooled = std::move(pooled);
  return logits;
}

ParameterTable StagedNetwork::backward(const ForwardTape& tape, const Tensor& grad_logits) const {
  using namespace layers;
  const bool batch_stats = tape.mode == Mode::Train;
  ParameterTable grads;
  for (const auto& [name, t] : params_) grads.emplace(name, Tensor(t.shape()));

  auto norm_back = [&](const Tensor& dy, const std::string& name, const ForwardTape::Norm& cache) {
    NormCache nc{cache.xhat, cache.inv_std};
    return batch_norm_backward(dy, at(params_, name + ".scale"), nc, batch_stats, at(grads, name + ".scale"),
                               at(grads, name + ".shift"));
  };

  Tensor dpooled = linear_backward(tape.pooled, at(params_, "head.weight"), grad_logits, at(grads, "head.weight"),
                                   at(grads, "head.bias"));
  const Tensor& last = tape.blocks.back().back().output;
  Tensor dx = global_avg_pool_backward(dpooled, last.dim(2), last.dim(3));

  for (int s = static_cast<int>(plan_.stages.size()) - 1; s >= 0; --s) {
    for (int o = static_cast<int>(plan_.stages[s].size()) - 1; o >= 0; --o) {
      const auto& b = plan_.stages[s][o];
      const auto& rec = tape.blocks[s][o];
      const auto p = block_prefix(s, o);
      Tensor dsum = relu_backward(rec.output, dx);
      Tensor dr1 = conv2d_backward(rec.relu1, at(params_, p + "conv2.weight"), norm_back(dsum, p + "bn2", rec.bn2),
                                   1, 1, at(grads, p + "conv2.weight"));
      Tensor da1 = norm_back(relu_backward(rec.relu1, dr1), p + "bn1", rec.bn1);
      Tensor dinput = conv2d_backward(rec.input, at(params_, p + "conv1.weight"), da1, b.stride, 1,
                                      at(grads, p + "conv1.weight"));
      if (b.projection) {
        add_inplace(dinput, conv2d_backward(rec.input, at(params_, p + "shortcut.weight"),
                                            norm_back(dsum, p + "shortcut_bn", rec.shortcut_bn), b.stride, 0,
                                            at(grads, p + "shortcut.weight")));
      } else {
        add_inplace(dinput, match_channels_backward(dsum, b.in_channels));
      }
      dx = std::move(dinput);
    }
  }
  Tensor dstem = norm_back(relu_backward(tape.stem_out, dx), "stem.bn", tape.stem_bn);
  conv2d_backward(tape.input, at(params_, "stem.conv.weight"), dstem, 1, 1, at(grads, "stem.conv.weight"), false);
  return grads;
}

Tensor StagedNetwork::run_stem(const Tensor& input) const {
  check_input(input);
  using namespace layers;
  return relu(batch_norm_eval(conv2d(input, at(params_, "stem.conv.weight"), 1, 1), at(params_, "stem.bn.scale"),
                              at(params_, "stem.bn.shift"), at(buffers_, "stem.bn.running_mean"),
                              at(buffers_, "stem.bn.running_var"), nullptr));
}

Tensor StagedNetwork::run_stage(int stage, const Tensor& input) const {
  using namespace layers;
  if (stage < 0 || stage >= static_cast<int>(plan_.stages.size())) {
    throw ValidationError(fmt::format("stage index {} out of range", stage));
  }
  auto norm = [&](const Tensor& x, const std::string& name) {
    return batch_norm_eval(x, at(params_, name + ".scale"), at(params_, name + ".shift"),
                           at(buffers_, name + ".running_mean"), at(buffers_, name + ".running_var"), nullptr);
  };
  Tensor x = input;
  for (const auto& b : plan_.stages[stage]) {
    if (x.rank() != 4 || x.dim(1) != b.in_channels) {
      throw ValidationError(fmt::format("stage {} expects {} input channels, got shape {}", stage, b.in_channels,
                                        shape_string(x.shape())));
    }
    const auto p = block_prefix(b.stage, b.layer);
    Tensor r1 = relu(norm(conv2d(x, at(params_, p + "conv1.weight"), b.stride, 1), p + "bn1"));
    Tensor sum = norm(conv2d(r1, at(params_, p + "conv2.weight"), 1, 1), p + "bn2");
    if (b.projection) {
      add_inplace(sum, norm(conv2d(x, at(params_, p + "shortcut.weight"), b.stride, 0), p + "shortcut_bn"));
    } else {
      add_inplace(sum, match_channels(x, b.out_channels));
    }
    x = relu(sum);
  }
  return x;
}

Tensor StagedNetwork::run_head(const Tensor& features) const {
  return layers::linear(layers::global_avg_pool(features), at(params_, "head.weight"), at(params_, "head.bias"));
}

std::vector<Tensor> StagedNetwork::forward_features(const Tensor& input) const {
  std::vector<Tensor> outs;
  Tensor x = run_stem(input);
  for (int s = 0; s < static_cast<int>(plan_.stages.size()); ++s) {
    x = run_stage(s, x);
    outs.push_back(x);
  }
  return outs;
}

std::vector<std::vector<std::uint8_t>> activation_codes(const ForwardTape& tape) {
  const int n = tape.input.dim(0);
  std::vector<std::vector<std::uint8_t>> codes(n);
  auto append = [&](const Tensor& t) {
    const std::size_t per = t.size() / static_cast<std::size_t>(n);
    for (int i = 0; i < n; ++i) {
      const double* p = t.data() + static_cast<std::size_t>(i) * per;
      for (std::size_t j = 0; j < per; ++j) codes[i].push_back(p[j] > 0.0 ? 1 : 0);
    }
  };
  append(tape.stem_out);
  for (const auto& stage : tape.blocks) {
    for (const auto& b : stage) {
      append(b.relu1);
      append(b.output);
    }
  }
  return codes;
}

namespace {

std::string checkpoint_bytes(const StagedNetwork& net) {
  ParameterTable all;
  for (const auto& [k, v] : net.params()) all.emplace("param/" + k, v);
  for (const auto& [k, v] : net.buffers()) all.emplace("buffer/" + k, v);
  return encode_tensor_archive(all);
}

}  // namespace

std::string checkpoint_hash(const StagedNetwork& net) { return content_hash(checkpoint_bytes(net)); }

std::string save_checkpoint(const StagedNetwork& net, const std::filesystem::path& stem, const Metadata& metadata) {
  const std::string bytes = checkpoint_bytes(net);
  const std::string hash = content_hash(bytes);
  auto bin = stem;
  bin += ".bin";
  auto manifest_path = stem;
  manifest_path += ".json";
  nlohmann::ordered_json manifest;
  manifest["format"] = "kdnas-checkpoint";
  manifest["version"] = 1;
  manifest["kind"] = "staged-network";
  manifest["block"] = "basic";
  manifest["spec_hash"] = net.spec().hash();
  manifest["spec"] = net.spec().serialize();
  manifest["config"] = net.config().serialize();
  manifest["num_classes"] = net.num_classes();
  manifest["tensors"] = bin.filename().string();
  manifest["tensors_hash"] = hash;
  manifest["metadata"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : metadata) manifest["metadata"][k] = v;
  write_file_atomic(bin, bytes);
  write_file_atomic(manifest_path, manifest.dump(2) + "\n");
  return hash;
}

StagedNetwork load_checkpoint(const std::filesystem::path& stem, Metadata* metadata) {
  auto manifest_path = stem;
  manifest_path += ".json";
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(fmt::format("checkpoint manifest {}: {}", manifest_path.string(), e.what()));
  }
  if (manifest.value("format", "") != "kdnas-checkpoint" || manifest.value("kind", "") != "staged-network") {
    throw SchemaError(fmt::format("{} is not a network checkpoint manifest", manifest_path.string()));
  }
  const auto spec = SearchSpaceSpec::parse(manifest.at("spec").get<std::string>());
  if (spec.hash() != manifest.at("spec_hash").get<std::string>()) {
    throw SchemaError(fmt::format("{}: spec hash mismatch", manifest_path.string()));
  }
  const auto config = ArchConfig::parse(manifest.at("config").get<std::string>());
  const auto bin = manifest_path.parent_path() / manifest.at("tensors").get<std::string>();
  const std::string bytes = read_file(bin);
  if (content_hash(bytes) != manifest.at("tensors_hash").get<std::string>()) {
    throw SchemaError(fmt::format("{}: tensor archive hash mismatch", bin.string()));
  }
  ParameterTable params, buffers;
  for (auto& [k, v] : decode_tensor_archive(bytes)) {
    if (k.rfind("param/", 0) == 0) {
      params.emplace(k.substr(6), std::move(v));
    } else if (k.rfind("buffer/", 0) == 0) {
      buffers.emplace(k.substr(7), std::move(v));
    } else {
      throw SchemaError(fmt::format("{}: unexpected tensor '{}'", bin.string(), k));
    }
  }
  if (metadata) {
    metadata->clear();
    for (auto& [k, v] : manifest.at("metadata").items()) (*metadata)[k] = v.get<std::string>();
  }
  return StagedNetwork::from_state(spec, config, manifest.at("num_classes").get<int>(), std::move(params),
                                   std::move(buffers));
}

}  // namespace kdnas
