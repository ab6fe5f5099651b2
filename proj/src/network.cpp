// Copyright 2026 The incrseg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "incrseg/network.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>

#include "json.hpp"

namespace incrseg {

void BodySpec::validate() const {
  if (n_fil < 1) throw ConfigError("network.n_fil must be >= 1");
  if (depth < 1 || depth > 8) throw ConfigError("network.depth must be in 1..8");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("network.dropout_rate must be in [0, 1)");
  }
  if (input_size < 1 || input_size % (1 << depth) != 0) {
    throw ConfigError("network.input_size must be divisible by 2^depth");
  }
  if (!(bn_momentum >= 0.0f && bn_momentum < 1.0f)) {
    throw ConfigError("network.bn_momentum must be in [0, 1)");
  }
}

BodySpec BodySpec::desk() {
  BodySpec s;
  s.n_fil = 16;
  s.depth = 3;
  s.input_size = 32;
  return s;
}

std::size_t head_parameter_formula(int n_fil, int n_classes, int n_conv_layers) {
  const auto n = static_cast<std::size_t>(n_fil);
  const auto nc = static_cast<std::size_t>(n_classes);
  const std::size_t conv = 3 * 3 * n * n;
  const std::size_t bn = 4 * n;  // gamma, beta, running mean, running var
  return static_cast<std::size_t>(n_conv_layers) * (conv + bn) + (1 * 1 * n * nc + nc);
}

FTensor image_tensor(std::span<const float> pixels, std::size_t h, std::size_t w) {
  FTensor t(1, 1, h, w);
  std::copy(pixels.begin(), pixels.end(), t.values().begin());
  return t;
}

namespace {

struct Head {
  HeadSpec spec;
  std::vector<ConvBnRelu> convs;
  std::vector<SpatialDropout> drops;
  Conv2d project;

  Head(const HeadSpec& s, int n_fil, double rate, float momentum, std::uint64_t seed) : spec(s) {
    const std::string prefix = "head" + std::to_string(s.head_id);
    const auto n = static_cast<std::size_t>(n_fil);
    for (int l = 0; l < s.n_conv_layers; ++l) {
      convs.emplace_back(prefix + "/conv" + std::to_string(l), n, n,
                         derive_seed(seed, static_cast<std::uint64_t>(l)), momentum);
      drops.emplace_back(rate);
    }
    project = Conv2d(prefix + "/project", n, static_cast<std::size_t>(s.n_classes), 1, true,
                     derive_seed(seed, 1000));
  }

  FTensor logits(FTensor x, Mode mode, Rng* rng) const {
    for (std::size_t l = 0; l < convs.size(); ++l) {
      x = drops[l].forward(convs[l].forward(x), mode, rng);
    }
    return project.forward(x);
  }

  FTensor train_logits(FTensor x, Rng& rng) {
    for (std::size_t l = 0; l < convs.size(); ++l) {
      x = drops[l].train_forward(convs[l].train_forward(x), rng);
    }
    return project.train_forward(x);
  }

  FTensor backward(const FTensor& dlogits) {
    FTensor g = project.backward(dlogits);
    for (std::size_t l = convs.size(); l-- > 0;) g = convs[l].backward(drops[l].backward(std::move(g)));
    return g;
  }

  template <typename P>
  void collect(std::vector<P>& out) const {
    auto& self = const_cast<Head&>(*this);
    std::vector<Parameter*> tmp;
    for (auto& c : self.convs) c.collect(tmp);
    self.project.collect(tmp);
    out.insert(out.end(), tmp.begin(), tmp.end());
  }
};

}  // namespace

struct Network::Impl {
  BodySpec spec;
  std::vector<std::pair<ConvBnRelu, ConvBnRelu>> encoder;
  std::vector<MaxPool2> pools;
  SpatialDropout pre_bottleneck;
  std::pair<ConvBnRelu, ConvBnRelu> bottleneck;
  SpatialDropout post_bottleneck;
  std::vector<DeconvBnRelu> up;  // index l upsamples into level l
  std::vector<std::pair<ConvBnRelu, ConvBnRelu>> decoder;
  std::vector<SpatialDropout> decoder_drops;
  std::vector<Head> heads;

  // Training cache.
  std::vector<std::size_t> skip_channels;
  std::vector<std::size_t> up_channels;
  std::vector<int> active_heads;

  struct BodyOut {
    FTensor o1;
    FTensor abstraction;
  };

  BodyOut body(FTensor x, Mode mode, Rng* rng) const {
    std::vector<FTensor> skips;
    for (std::size_t l = 0; l < encoder.size(); ++l) {
      x = encoder[l].second.forward(encoder[l].first.forward(x));
      skips.push_back(x);
      x = MaxPool2::forward(x);
    }
    x = pre_bottleneck.forward(std::move(x), mode, rng);
    x = bottleneck.second.forward(bottleneck.first.forward(x));
    BodyOut out;
    out.abstraction = x;
    x = post_bottleneck.forward(std::move(x), mode, rng);
    for (std::size_t l = encoder.size(); l-- > 0;) {
      x = concat_channels(up[l].forward(x), skips[l]);
      x = decoder[l].second.forward(decoder[l].first.forward(x));
      x = decoder_drops[l].forward(std::move(x), mode, rng);
    }
    out.o1 = std::move(x);
    return out;
  }

  FTensor train_body(FTensor x, Rng& rng) {
    std::vector<FTensor> skips;
    skip_channels.clear();
    up_channels.assign(encoder.size(), 0);
    for (std::size_t l = 0; l < encoder.size(); ++l) {
      x = encoder[l].second.train_forward(encoder[l].first.train_forward(x));
      skips.push_back(x);
      skip_channels.push_back(x.c());
      x = pools[l].train_forward(x);
    }
    x = pre_bottleneck.train_forward(std::move(x), rng);
    x = bottleneck.second.train_forward(bottleneck.first.train_forward(x));
    x = post_bottleneck.train_forward(std::move(x), rng);
    for (std::size_t l = encoder.size(); l-- > 0;) {
      FTensor u = up[l].train_forward(x);
      up_channels[l] = u.c();
      x = concat_channels(u, skips[l]);
      x = decoder[l].second.train_forward(decoder[l].first.train_forward(x));
      x = decoder_drops[l].train_forward(std::move(x), rng);
    }
    return x;
  }

  void backward_body(FTensor g) {
    std::vector<FTensor> skip_grads(encoder.size());
    for (std::size_t l = 0; l < encoder.size(); ++l) {
      g = decoder_drops[l].backward(std::move(g));
      g = decoder[l].first.backward(decoder[l].second.backward(g));
      auto [gu, gs] = split_channels(g, up_channels[l]);
      skip_grads[l] = std::move(gs);
      g = up[l].backward(gu);
    }
    g = post_bottleneck.backward(std::move(g));
    g = bottleneck.first.backward(bottleneck.second.backward(g));
    g = pre_bottleneck.backward(std::move(g));
    for (std::size_t l = encoder.size(); l-- > 0;) {
      g = pools[l].backward(g);
      add_into(g, skip_grads[l]);
      g = encoder[l].first.backward(encoder[l].second.backward(g));
    }
  }

  void collect_body(std::vector<Parameter*>& out) {
    for (auto& [a, b] : encoder) {
      a.collect(out);
      b.collect(out);
    }
    bottleneck.first.collect(out);
    bottleneck.second.collect(out);
    for (std::size_t l = encoder.size(); l-- > 0;) {
      up[l].collect(out);
      decoder[l].first.collect(out);
      decoder[l].second.collect(out);
    }
  }

  std::vector<Parameter*> all() {
    std::vector<Parameter*> out;
    collect_body(out);
    for (auto& h : heads) h.collect(out);
    return out;
  }

  void check_heads(std::span<const int> ids) const {
    if (ids.empty()) throw UsageError("forward: no heads requested");
    for (int j : ids) {
      if (j < 0 || static_cast<std::size_t>(j) >= heads.size()) {
        throw UsageError("forward: unknown head id " + std::to_string(j));
      }
    }
  }
};

Network::Network(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
Network::Network(Network&&) noexcept = default;
Network& Network::operator=(Network&&) noexcept = default;
Network::~Network() = default;
Network::Network(const Network& o) : impl_(std::make_unique<Impl>(*o.impl_)) {}
Network& Network::operator=(const Network& o) {
  if (this != &o) impl_ = std::make_unique<Impl>(*o.impl_);
  return *this;
}

Network Network::build(const BodySpec& spec, std::uint64_t seed) {
  spec.validate();
  auto impl = std::make_unique<Impl>();
  impl->spec = spec;
  const float mom = spec.bn_momentum;
  std::uint64_t tag = 0;
  auto next_seed = [&] { return derive_seed(seed, tag++); };
  std::size_t in = 1;
  for (int l = 0; l < spec.depth; ++l) {
    const auto f = static_cast<std::size_t>(spec.filters(l));
    const std::string p = "body/enc" + std::to_string(l);
    impl->encoder.emplace_back(ConvBnRelu(p + "a", in, f, next_seed(), mom),
                               ConvBnRelu(p + "b", f, f, next_seed(), mom));
    impl->pools.emplace_back();
    in = f;
  }
  impl->pre_bottleneck = SpatialDropout(spec.dropout_rate);
  const auto fb = static_cast<std::size_t>(spec.bottleneck_channels());
  impl->bottleneck = {ConvBnRelu("body/bottleneck_a", in, fb, next_seed(), mom),
                      ConvBnRelu("body/bottleneck_b", fb, fb, next_seed(), mom)};
  impl->post_bottleneck = SpatialDropout(spec.dropout_rate);
  impl->up.resize(static_cast<std::size_t>(spec.depth));
  impl->decoder.resize(static_cast<std::size_t>(spec.depth));
  impl->decoder_drops.resize(static_cast<std::size_t>(spec.depth));
  std::size_t cur = fb;
  for (int l = spec.depth - 1; l >= 0; --l) {
    const auto f = static_cast<std::size_t>(spec.filters(l));
    const auto idx = static_cast<std::size_t>(l);
    const std::string p = "body/dec" + std::to_string(l);
    // The deconvolution keeps the channel count of its input; the skip
    // concatenation then adds the encoder channels of the same level.
    impl->up[idx] = DeconvBnRelu(p + "_up", cur, cur, next_seed(), mom);
    impl->decoder[idx] = {ConvBnRelu(p + "a", cur + f, f, next_seed(), mom),
                          ConvBnRelu(p + "b", f, f, next_seed(), mom)};
    impl->decoder_drops[idx] = SpatialDropout(spec.dropout_rate);
    cur = f;
  }
  return Network(std::move(impl));
}

void Network::attach_head(const HeadSpec& head, std::uint64_t seed) {
  if (head.head_id != static_cast<int>(impl_->heads.size())) {
    throw UsageError("attach_head: head_id " + std::to_string(head.head_id) +
                     " but network has " + std::to_string(impl_->heads.size()) + " heads");
  }
  if (head.n_classes < 2) throw UsageError("attach_head: n_classes must be >= 2");
  if (head.n_conv_layers < 1) throw UsageError("attach_head: n_conv_layers must be >= 1");
  if (head.class_map.size() != static_cast<std::size_t>(head.n_classes)) {
    throw UsageError("attach_head: class_map size must equal n_classes");
  }
  impl_->heads.emplace_back(head, impl_->spec.n_fil, impl_->spec.dropout_rate,
                            impl_->spec.bn_momentum, seed);
}

const BodySpec& Network::spec() const { return impl_->spec; }
std::size_t Network::head_count() const { return impl_->heads.size(); }
const HeadSpec& Network::head(int j) const {
  if (j < 0 || static_cast<std::size_t>(j) >= impl_->heads.size()) {
    throw UsageError("unknown head id " + std::to_string(j));
  }
  return impl_->heads[static_cast<std::size_t>(j)].spec;
}

std::vector<FTensor> Network::forward(const FTensor& images, std::span<const int> heads,
                                      Mode mode, Rng* rng) const {
  if (mode == Mode::Train) throw UsageError("forward: use train_forward for training");
  impl_->check_heads(heads);
  const auto body = impl_->body(images, mode, rng);
  std::vector<FTensor> out;
  for (int j : heads) {
    out.push_back(softmax_channels(
        impl_->heads[static_cast<std::size_t>(j)].logits(body.o1, mode, rng)));
  }
  return out;
}

std::vector<FTensor> Network::forward_logits(const FTensor& images, std::span<const int> heads,
                                             Mode mode, Rng* rng) const {
  if (mode == Mode::Train) throw UsageError("forward: use train_forward for training");
  impl_->check_heads(heads);
  const auto body = impl_->body(images, mode, rng);
  std::vector<FTensor> out;
  for (int j : heads) out.push_back(impl_->heads[static_cast<std::size_t>(j)].logits(body.o1, mode, rng));
  return out;
}

std::vector<float> Network::abstraction_descriptor(const FTensor& image) const {
  const auto size = static_cast<std::size_t>(impl_->spec.input_size);
  if (image.h() != size || image.w() != size || image.c() != 1) {
    throw UsageError("abstraction_descriptor: image does not match input size");
  }
  const auto body = impl_->body(image, Mode::Infer, nullptr);
  const FTensor& a = body.abstraction;
  std::vector<float> d(a.c());
  for (std::size_t c = 0; c < a.c(); ++c) {
    double sum = 0.0;
    for (float v : a.channel(0, c)) sum += v;
    d[c] = static_cast<float>(sum / static_cast<double>(a.plane()));
  }
  return d;
}

std::vector<FTensor> Network::train_forward(const FTensor& images, std::span<const int> heads,
                                            Rng& rng) {
  impl_->check_heads(heads);
  FTensor o1 = impl_->train_body(images, rng);
  impl_->active_heads.assign(heads.begin(), heads.end());
  std::vector<FTensor> out;
  for (int j : heads) {
    out.push_back(softmax_channels(impl_->heads[static_cast<std::size_t>(j)].train_logits(o1, rng)));
  }
  return out;
}

void Network::backward(std::span<const FTensor> logit_grads) {
  if (logit_grads.size() != impl_->active_heads.size()) {
    throw UsageError("backward: gradient count does not match heads of train_forward");
  }
  FTensor g;
  for (std::size_t i = 0; i < logit_grads.size(); ++i) {
    if (logit_grads[i].empty()) continue;
    add_into(g, impl_->heads[static_cast<std::size_t>(impl_->active_heads[i])].backward(logit_grads[i]));
  }
  if (!g.empty()) impl_->backward_body(std::move(g));
}

void Network::zero_grad() {
  for (auto* p : parameters()) std::fill(p->grad.begin(), p->grad.end(), 0.0f);
}

std::vector<Parameter*> Network::parameters() { return impl_->all(); }

std::vector<const Parameter*> Network::parameters() const {
  auto all = impl_->all();
  return {all.begin(), all.end()};
}

std::vector<Parameter*> Network::head_parameters(int j) {
  std::vector<Parameter*> out;
  impl_->heads.at(static_cast<std::size_t>(j)).collect(out);
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->value.size();
  return n;
}

std::size_t Network::body_parameter_count() const {
  std::vector<Parameter*> out;
  impl_->collect_body(out);
  std::size_t n = 0;
  for (const auto* p : out) n += p->value.size();
  return n;
}

std::size_t Network::head_parameter_count(int j) const {
  std::size_t n = 0;
  for (const auto* p : const_cast<Network*>(this)->head_parameters(j)) n += p->value.size();
  return n;
}

std::uint64_t Network::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto* p : parameters()) {
    h = fnv1a(p->name.data(), p->name.size(), h);
    h = fnv1a(p->value.data(), p->value.size() * sizeof(float), h);
  }
  return h;
}

std::vector<std::vector<float>> Network::snapshot() const {
  std::vector<std::vector<float>> out;
  for (const auto* p : parameters()) out.push_back(p->value);
  return out;
}

void Network::restore(const std::vector<std::vector<float>>& snap) {
  auto params = parameters();
  if (snap.size() != params.size()) throw UsageError("restore: snapshot does not match network");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (snap[i].size() != params[i]->value.size()) throw UsageError("restore: size mismatch");
    params[i]->value = snap[i];
  }
}

// Checkpoint: magic line, one JSON header line, then per tensor
// u32 name length, name, u64 float count, little-endian float32 data.
namespace {
constexpr const char* kMagic = "INCRSEG-CHECKPOINT 1";
}

void Network::save(const std::filesystem::path& file) const {
  nlohmann::ordered_json header;
  const auto& s = impl_->spec;
  header["spec"] = {{"n_fil", s.n_fil},
                    {"depth", s.depth},
                    {"dropout_rate", s.dropout_rate},
                    {"input_size", s.input_size},
                    {"bn_momentum", s.bn_momentum}};
  header["head_count"] = impl_->heads.size();
  auto heads = nlohmann::ordered_json::array();
  for (const auto& h : impl_->heads) {
    heads.push_back({{"head_id", h.spec.head_id},
                     {"n_classes", h.spec.n_classes},
                     {"n_conv_layers", h.spec.n_conv_layers},
                     {"class_map", h.spec.class_map}});
  }
  header["heads"] = heads;
  const auto params = parameters();
  header["tensors"] = params.size();

  std::ofstream os(file, std::ios::binary);
  if (!os) throw RuntimeFailure("cannot write checkpoint " + file.string());
  os << kMagic << "\n" << header.dump() << "\n";
  for (const auto* p : params) {
    const auto len = static_cast<std::uint32_t>(p->name.size());
    const auto count = static_cast<std::uint64_t>(p->value.size());
    os.write(reinterpret_cast<const char*>(&len), sizeof len);
    os.write(p->name.data(), len);
    os.write(reinterpret_cast<const char*>(&count), sizeof count);
    os.write(reinterpret_cast<const char*>(p->value.data()),
             static_cast<std::streamsize>(count * sizeof(float)));
  }
  if (!os) throw RuntimeFailure("failed writing checkpoint " + file.string());
}

Network Network::load(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw ConfigError("cannot read checkpoint " + file.string());
  std::string magic, header_line;
  std::getline(is, magic);
  if (magic != kMagic) throw ConfigError(file.string() + ": not an incrseg checkpoint");
  std::getline(is, header_line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(file.string() + ": bad header: " + e.what());
  }
  BodySpec spec;
  const auto& js = header.at("spec");
  spec.n_fil = js.at("n_fil");
  spec.depth = js.at("depth");
  spec.dropout_rate = js.at("dropout_rate");
  spec.input_size = js.at("input_size");
  spec.bn_momentum = js.at("bn_momentum");
  Network net = build(spec, 0);
  for (const auto& jh : header.at("heads")) {
    HeadSpec h;
    h.head_id = jh.at("head_id");
    h.n_classes = jh.at("n_classes");
    h.n_conv_layers = jh.at("n_conv_layers");
    h.class_map = jh.at("class_map").get<std::vector<int>>();
    net.attach_head(h, 0);
  }
  std::map<std::string, std::vector<float>> tensors;
  const std::size_t n = header.at("tensors");
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t len = 0;
    std::uint64_t count = 0;
    is.read(reinterpret_cast<char*>(&len), sizeof len);
    std::string name(len, '\0');
    is.read(name.data(), len);
    is.read(reinterpret_cast<char*>(&count), sizeof count);
    std::vector<float> values(count);
    is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (!is) throw ConfigError(file.string() + ": truncated checkpoint");
    tensors.emplace(std::move(name), std::move(values));
  }
  for (auto* p : net.parameters()) {
    auto it = tensors.find(p->name);
    if (it == tensors.end() || it->second.size() != p->value.size()) {
      throw ConfigError(file.string() + ": missing or mis-sized tensor " + p->name);
    }
    p->value = it->second;
  }
  return net;
}

}  // namespace incrseg
