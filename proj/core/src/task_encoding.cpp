// SPDX-License-Identifier: Apache-2.0
#include "kdnas/task_encoding.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "fused_mlp.hpp"
#include "kdnas/error.hpp"
#include "kdnas/io.hpp"
#include "kdnas/remapping.hpp"

namespace kdnas {

NoiseProbe NoiseProbe::make(const InputShape& shape, std::uint64_t seed, int batch) {
  if (batch < 1) throw ValidationError(fmt::format("probe batch must be >= 1, got {}", batch));
  NoiseProbe probe;
  probe.seed = seed;
  probe.z = Tensor({batch, shape.channels, shape.height, shape.width});
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : probe.z.values()) v = normal(rng);
  return probe;
}

std::vector<double> pooled_last_stage(const StagedNetwork& net, const NoiseProbe& probe) {
  const Tensor t = net.forward_features(probe.z).back();
  if (!t.all_finite()) throw EmbeddingError("non-finite values in the last-stage feature map");
  const int n = t.dim(0), c = t.dim(1);
  const std::size_t hw = static_cast<std::size_t>(t.dim(2)) * t.dim(3);
  std::vector<double> pooled(c, 0.0);
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const double* p = t.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
      double acc = 0.0;
      for (std::size_t i = 0; i < hw; ++i) acc += p[i];
      pooled[ch] += acc;
    }
  }
  for (auto& v : pooled) v /= static_cast<double>(n) * static_cast<double>(hw);
  return pooled;
}

std::vector<double> probe_features(const StagedNetwork& net, const NoiseProbe& probe) {
  auto p = pooled_last_stage(net, probe);
  double sq = 0.0;
  for (double v : p) sq += v * v;
  const double scale = 1.0 / std::sqrt(sq + 1e-12);
  for (auto& v : p) v *= scale;
  for (double v : p) {
    if (!std::isfinite(v)) throw EmbeddingError("non-finite probe feature");
  }
  return p;
}

namespace {

std::vector<double> onehot_of(const SearchSpaceSpec& spec, const ArchConfig& config) {
  const auto bits = encode_onehot(spec, config);
  return {bits.begin(), bits.end()};
}

}  // namespace

TeacherEncoder::TeacherEncoder(const StagedNetwork& teacher, const NoiseProbe& probe)
    : teacher_(&teacher), probe_(&probe), teacher_features_(probe_features(teacher, probe)) {}

PairFeatures TeacherEncoder::encode(const ArchConfig& student) const {
  const StagedNetwork s = remap_network(*teacher_, student);
  return {onehot_of(teacher_->spec(), student), probe_features(s, *probe_), teacher_features_};
}

PairFeatures TeacherEncoder::encode_teacher() const {
  return {onehot_of(teacher_->spec(), teacher_->config()), teacher_features_, teacher_features_};
}

ParamLayout::ParamLayout(const EncoderDims& dims) : dims_(dims) {
  if (dims.onehot == 0 || dims.feature == 0 || dims.embed == 0 || dims.hidden == 0) {
    throw ValidationError(fmt::format("encoder dims must be positive (onehot {}, feature {}, embed {}, hidden {})",
                                      dims.onehot, dims.feature, dims.embed, dims.hidden));
  }
  if (dims.sigma_layers != 1 && dims.sigma_layers != 2) {
    throw ValidationError(fmt::format("sigma_layers must be 1 or 2, got {}", dims.sigma_layers));
  }
  auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
    blocks_.push_back({std::move(name), size_, rows, cols});
    size_ += rows * cols;
  };
  add("q_a.weight", dims.embed, dims.onehot);
  add("q_a.bias", dims.embed, 1);
  add("q_f.weight", dims.embed, dims.feature);
  add("q_f.bias", dims.embed, 1);
  add("sigma.0.weight", dims.hidden, 3 * dims.embed);
  add("sigma.0.bias", dims.hidden, 1);
  if (dims.sigma_layers == 2) {
    add("sigma.1.weight", dims.hidden, dims.hidden);
    add("sigma.1.bias", dims.hidden, 1);
  }
  add("head.weight", 1, dims.hidden);
  add("head.bias", 1, 1);
}

const ParamLayout::Block& ParamLayout::block(const std::string& name) const {
  for (const auto& b : blocks_) {
    if (b.name == name) return b;
  }
  throw ValidationError(fmt::format("no parameter block named '{}'", name));
}

namespace {

void check_phi(const ParamLayout& layout, std::span<const double> phi) {
  if (phi.size() != layout.size()) {
    throw ValidationError(fmt::format("parameter vector has {} entries, layout needs {}", phi.size(), layout.size()));
  }
}

void check_features(const ParamLayout& layout, const PairFeatures& f) {
  const auto& d = layout.dims();
  if (f.onehot.size() != d.onehot) {
    throw ValidationError(fmt::format("one-hot length {} does not match encoder length {}", f.onehot.size(), d.onehot));
  }
  if (f.student.size() != d.feature || f.teacher.size() != d.feature) {
    throw ValidationError(fmt::format("feature length {}/{} does not match encoder length {}", f.student.size(),
                                      f.teacher.size(), d.feature));
  }
}

}  // namespace

std::vector<double> apply_projection(const ParamLayout& layout, std::span<const double> phi, const std::string& name,
                                     std::span<const double> x) {
  check_phi(layout, phi);
  const auto& w = layout.block(name + ".weight");
  const auto& b = layout.block(name + ".bias");
  if (x.size() != w.cols) {
    throw ValidationError(fmt::format("{} expects input length {}, got {}", name, w.cols, x.size()));
  }
  std::vector<double> y(w.rows);
  detail::affine_sparse(phi.data() + w.offset, phi.data() + b.offset, w.rows, w.cols, x.data(), y.data());
  return y;
}

std::vector<double> arch_embedding(const ParamLayout& layout, std::span<const double> phi,
                                   std::span<const double> onehot) {
  return apply_projection(layout, phi, "q_a", onehot);
}

std::vector<double> functional_embedding(const ParamLayout& layout, std::span<const double> phi,
                                         const StagedNetwork& net, const NoiseProbe& probe) {
  return apply_projection(layout, phi, "q_f", probe_features(net, probe));
}

TaskEmbedding embed(const ParamLayout& layout, std::span<const double> phi, const PairFeatures& features) {
  check_phi(layout, phi);
  check_features(layout, features);
  const detail::Offsets o(layout);
  detail::FusedPass<double> pass;
  detail::fused_forward(o, phi.data(), features, pass);
  TaskEmbedding e;
  e.h_zs.assign(pass.x.begin(), pass.x.begin() + o.E);
  e.h_a.assign(pass.x.begin() + o.E, pass.x.begin() + 2 * o.E);
  e.h_zt.assign(pass.x.begin() + 2 * o.E, pass.x.end());
  e.fused = std::move(pass.fused);
  return e;
}

void fused_vjp(const ParamLayout& layout, std::span<const double> phi, const PairFeatures& features,
               std::span<const double> d_fused, std::span<double> grad) {
  check_phi(layout, phi);
  check_features(layout, features);
  if (d_fused.size() != layout.dims().hidden || grad.size() != layout.size()) {
    throw ValidationError("fused_vjp: cotangent or gradient has the wrong length");
  }
  const detail::Offsets o(layout);
  detail::FusedPass<double> pass;
  detail::fused_forward(o, phi.data(), features, pass);
  detail::fused_backward(o, phi.data(), features, pass, d_fused.data(), 0.0, grad.data());
}

TaskEmbedding encode_task(const ArchConfig& student, const StagedNetwork& teacher, const NoiseProbe& probe,
                          const ParamLayout& layout, std::span<const double> phi) {
  const TeacherEncoder encoder(teacher, probe);
  return embed(layout, phi, encoder.encode(student));
}

void write_embedding_dump(const std::filesystem::path& stem, const std::vector<TaskEmbedding>& embeddings,
                          std::uint64_t probe_seed) {
  ParameterTable table;
  auto put = [&](std::size_t i, const char* field, const std::vector<double>& v) {
    table.emplace(fmt::format("{:06d}.{}", i, field), Tensor({static_cast<int>(v.size())}, v));
  };
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    put(i, "h_a", embeddings[i].h_a);
    put(i, "h_zs", embeddings[i].h_zs);
    put(i, "h_zt", embeddings[i].h_zt);
    put(i, "fused", embeddings[i].fused);
  }
  const std::string bytes = encode_tensor_archive(table);
  nlohmann::ordered_json manifest;
  manifest["format"] = "kdnas-embeddings";
  manifest["version"] = 1;
  manifest["count"] = embeddings.size();
  manifest["probe_seed"] = probe_seed;
  manifest["tensors_hash"] = content_hash(bytes);
  auto bin = stem;
  bin += ".bin";
  auto json = stem;
  json += ".json";
  write_file_atomic(bin, bytes);
  write_file_atomic(json, manifest.dump(2) + "\n");
}

std::vector<TaskEmbedding> read_embedding_dump(const std::filesystem::path& stem) {
  auto bin = stem;
  bin += ".bin";
  auto json = stem;
  json += ".json";
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(json));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(fmt::format("{}: {}", json.string(), e.what()));
  }
  if (manifest.value("format", "") != "kdnas-embeddings") {
    throw SchemaError(fmt::format("{}: not an embedding dump", json.string()));
  }
  const std::string bytes = read_file(bin);
  if (content_hash(bytes) != manifest.value("tensors_hash", "")) {
    throw SchemaError(fmt::format("{}: tensor hash mismatch", bin.string()));
  }
  const auto table = decode_tensor_archive(bytes);
  const std::size_t count = manifest.at("count").get<std::size_t>();
  std::vector<TaskEmbedding> out(count);
  auto get = [&](std::size_t i, const char* field) {
    const auto it = table.find(fmt::format("{:06d}.{}", i, field));
    if (it == table.end()) throw SchemaError(fmt::format("{}: missing entry {} {}", bin.string(), i, field));
    return std::vector<double>(it->second.values().begin(), it->second.values().end());
  };
  for (std::size_t i = 0; i < count; ++i) {
    out[i] = {get(i, "h_a"), get(i, "h_zs"), get(i, "h_zt"), get(i, "fused")};
  }
  return out;
}

}  // namespace kdnas
