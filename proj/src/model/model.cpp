#include "raddet/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "raddet/rng.hpp"

namespace raddet {

using json = nlohmann::json;

ModelVariant parse_variant(const std::string& s) {
  if (s == "cross_attention") return ModelVariant::cross_attention;
  if (s == "ra_only") return ModelVariant::ra_only;
  if (s == "three_decoder") return ModelVariant::three_decoder;
  throw std::invalid_argument("model variant must be cross_attention, ra_only or three_decoder, got '" + s + "'");
}

const char* to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::cross_attention: return "cross_attention";
    case ModelVariant::ra_only: return "ra_only";
    default: return "three_decoder";
  }
}

void ModelConfig::validate() const {
  geometry.validate();
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (t_frames < 1) fail("t_frames must be >= 1");
  if (enc_channels.empty() || enc_channels.size() != enc_strides.size() ||
      enc_channels.size() != doppler_strides.size()) {
    fail("enc_channels, enc_strides and doppler_strides must have the same nonzero length");
  }
  if (dec_channels.empty()) fail("dec_channels must not be empty");
  if (dec_channels.size() < 3) fail("the heading head needs at least 3 decoder stages");
  int down = 1, ddown = 1;
  for (std::size_t i = 0; i < enc_strides.size(); ++i) {
    if (enc_strides[i] < 1 || doppler_strides[i] < 1) fail("strides must be positive");
    down *= enc_strides[i];
    ddown *= doppler_strides[i];
  }
  const int up = 1 << dec_channels.size();
  if (down != up) {
    fail("encoder downsamples by " + std::to_string(down) + " but the decoder upsamples by " + std::to_string(up));
  }
  if (geometry.r_bins % down || geometry.a_bins % down) {
    fail("range and angle bins (" + std::to_string(geometry.r_bins) + ", " + std::to_string(geometry.a_bins) +
         ") must be divisible by " + std::to_string(down));
  }
  if (geometry.d_bins % ddown) {
    fail("Doppler bins (" + std::to_string(geometry.d_bins) + ") must be divisible by " + std::to_string(ddown));
  }
  if (geometry.r_bins % 4 || geometry.a_bins % 4) fail("range and angle bins must be divisible by 4");
}

Tensor cross_attention(const Tensor& f_ra, const Tensor& f_rd, const Tensor& f_ad, const Tensor& gamma,
                       const Tensor& beta) {
  const bool batched = f_ra.rank() == 4;
  if (f_ra.rank() != (batched ? 4u : 3u) || f_rd.rank() != f_ra.rank() || f_ad.rank() != f_ra.rank()) {
    throw std::invalid_argument("cross_attention: inputs must all be rank 3 or all rank 4, got " +
                                to_string(f_ra.shape()) + ", " + to_string(f_rd.shape()) + ", " +
                                to_string(f_ad.shape()));
  }
  const std::size_t o = batched ? 1 : 0;
  const std::size_t n = batched ? f_ra.dim(0) : 1;
  const std::size_t C = f_ra.dim(o), h = f_ra.dim(o + 1), w = f_ra.dim(o + 2);
  if (f_rd.dim(o) != C || f_ad.dim(o) != C) throw std::invalid_argument("cross_attention: channel counts differ");
  if (f_rd.dim(o + 1) != h) {
    throw std::invalid_argument("cross_attention: RD range axis " + std::to_string(f_rd.dim(o + 1)) +
                                " does not match RA range axis " + std::to_string(h));
  }
  if (f_ad.dim(o + 1) != w) {
    throw std::invalid_argument("cross_attention: AD angle axis " + std::to_string(f_ad.dim(o + 1)) +
                                " does not match RA angle axis " + std::to_string(w));
  }
  if (f_rd.dim(o + 2) != f_ad.dim(o + 2)) {
    throw std::invalid_argument("cross_attention: Doppler dims differ (" + std::to_string(f_rd.dim(o + 2)) +
                                " vs " + std::to_string(f_ad.dim(o + 2)) + ")");
  }
  const std::size_t d = f_rd.dim(o + 2);
  if (batched && (f_rd.dim(0) != n || f_ad.dim(0) != n)) throw std::invalid_argument("cross_attention: batch differs");

  const Tensor rd = reshape(f_rd, {n * C, h, d});
  const Tensor ad = reshape(f_ad, {n * C, w, d});
  const Tensor ra = reshape(f_ra, {n * C, h, w});
  const Tensor f1 = batched_matmul(rd, transpose_last2(ad));  // [nC, h, w]
  const Tensor f2 = mul(softmax_lastdim(f1), ra);
  const Tensor out = layernorm_channels(reshape(add(f2, ra), {n, C, h, w}), gamma, beta);
  return batched ? out : reshape(out, {C, h, w});
}

namespace {

std::vector<double> kaiming_uniform(std::size_t count, double fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / fan_in);
  std::vector<double> v(count);
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return v;
}

}  // namespace

std::size_t Model::add_param(std::string name, Shape shape, std::vector<double> values) {
  params_.push_back({std::move(name), Tensor(std::move(shape), std::move(values), true)});
  return params_.size() - 1;
}

Model::ConvBlock Model::add_block(const std::string& name, int cin, int cout, Pair2 stride, bool transpose,
                                  std::uint64_t& seed) {
  Rng rng(Rng::mix(seed++));
  ConvBlock b;
  b.stride = stride;
  b.transpose = transpose;
  const std::size_t k = transpose ? 4 : 3;
  const std::size_t n = static_cast<std::size_t>(cin) * cout * k * k;
  // A stride-2 transpose conv with a 4x4 kernel feeds each output from 2x2 taps per input channel.
  const double fan_in = transpose ? cin * 4.0 : static_cast<double>(cin) * k * k;
  const Shape wshape = transpose ? Shape{std::size_t(cin), std::size_t(cout), k, k}
                                 : Shape{std::size_t(cout), std::size_t(cin), k, k};
  b.weight = add_param(name + ".weight", wshape, kaiming_uniform(n, fan_in, rng));
  b.gamma = add_param(name + ".bn.gamma", {std::size_t(cout)}, std::vector<double>(cout, 1.0));
  b.beta = add_param(name + ".bn.beta", {std::size_t(cout)}, std::vector<double>(cout, 0.0));
  b.alpha = add_param(name + ".prelu", {std::size_t(cout)}, std::vector<double>(cout, 0.25));
  bn_.emplace_back(name + ".bn", BatchNormState(cout));
  b.bn = bn_.size() - 1;
  return b;
}

Model::Head Model::add_head(const std::string& name, int cin, int cout, double bias, bool zero_weight,
                            std::uint64_t& seed) {
  Rng rng(Rng::mix(seed++));
  Head h;
  auto w = kaiming_uniform(static_cast<std::size_t>(cin) * cout, cin, rng);
  if (zero_weight) std::fill(w.begin(), w.end(), 0.0);
  h.weight = add_param(name + ".weight", {std::size_t(cout), std::size_t(cin), 1, 1}, std::move(w));
  h.bias = add_param(name + ".bias", {std::size_t(cout)}, std::vector<double>(cout, bias));
  return h;
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const auto& c = config_;
  const int T = c.t_frames;
  std::uint64_t s = seed;
  auto encoder = [&](const std::string& name, bool doppler) {
    std::vector<ConvBlock> enc;
    int cin = T;
    for (std::size_t i = 0; i < c.enc_channels.size(); ++i) {
      const Pair2 stride = doppler ? Pair2(c.enc_strides[i], c.doppler_strides[i]) : Pair2(c.enc_strides[i]);
      enc.push_back(add_block(name + "." + std::to_string(i), cin, c.enc_channels[i], stride, false, s));
      cin = c.enc_channels[i];
    }
    return enc;
  };
  auto decoder = [&](const std::string& name) {
    std::vector<ConvBlock> dec;
    int cin = c.enc_channels.back();
    for (std::size_t i = 0; i < c.dec_channels.size(); ++i) {
      dec.push_back(add_block(name + "." + std::to_string(i), cin, c.dec_channels[i], Pair2(2), true, s));
      cin = c.dec_channels[i];
    }
    return dec;
  };

  enc_ra_ = encoder("enc_ra", false);
  if (c.variant != ModelVariant::ra_only) {
    enc_rd_ = encoder("enc_rd", true);
    enc_ad_ = encoder("enc_ad", true);
  }
  const auto C = static_cast<std::size_t>(c.enc_channels.back());
  if (c.variant == ModelVariant::cross_attention) {
    ln_gamma_ = add_param("fusion.ln.gamma", {C}, std::vector<double>(C, 1.0));
    ln_beta_ = add_param("fusion.ln.beta", {C}, std::vector<double>(C, 0.0));
  }
  decoders_.push_back(decoder("dec"));
  if (c.variant == ModelVariant::three_decoder) {
    decoders_.push_back(decoder("dec_rd"));
    decoders_.push_back(decoder("dec_ad"));
    // 1x1 conv merging the three decoder outputs.
    const int f = c.dec_channels.back();
    Rng rng(Rng::mix(s++));
    merge_weight_ = add_param("merge.weight", {std::size_t(f), std::size_t(3 * f), 1, 1},
                              kaiming_uniform(static_cast<std::size_t>(3 * f) * f, 3.0 * f, rng));
    merge_bias_ = add_param("merge.bias", {std::size_t(f)}, std::vector<double>(f, 0.0));
  }
  const int f_full = c.dec_channels.back();
  const int f_quarter = c.dec_channels[c.dec_channels.size() - 3];
  heat_ = add_head("head.heatmap", f_full, kNumClasses, std::log(c.heatmap_prior / (1.0 - c.heatmap_prior)), false, s);
  // Offsets start at exactly zero (no correction). A random head lets the
  // offsets drift as decoder features grow, faster than the weak focal
  // gradient pulls them back.
  off_ = add_head("head.offset", f_full, 2, 0.0, true, s);
  head_ = add_head("head.heading", f_quarter, 2, 0.0, false, s);
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

Tensor Model::run_block(const ConvBlock& b, const Tensor& x, bool training) {
  const Tensor& w = params_[b.weight].value;
  Tensor y = b.transpose ? conv_transpose2d(x, w, Tensor(), b.stride, Pair2(1))
                         : conv2d(x, w, Tensor(), b.stride, Pair2(1));
  y = batchnorm2d(y, params_[b.gamma].value, params_[b.beta].value, bn_[b.bn].second, training);
  return prelu(y, params_[b.alpha].value);
}

Tensor Model::run_head(const Head& h, const Tensor& x) const {
  return conv2d(x, params_[h.weight].value, params_[h.bias].value, Pair2(1), Pair2(0));
}

Tensor Model::decode(const std::vector<ConvBlock>& dec, const Tensor& x, bool training, Tensor* quarter) {
  Tensor y = x;
  for (std::size_t i = 0; i < dec.size(); ++i) {
    y = run_block(dec[i], y, training);
    if (i + 3 == dec.size() && quarter) *quarter = y;
  }
  return y;
}

NetworkOutput Model::forward(const ModelInput& in, bool training) {
  const auto& g = config_.geometry;
  const auto T = static_cast<std::size_t>(config_.t_frames);
  const auto R = static_cast<std::size_t>(g.r_bins), A = static_cast<std::size_t>(g.a_bins),
             D = static_cast<std::size_t>(g.d_bins);
  auto check = [&](const char* what, const Tensor& t, std::size_t h, std::size_t w) {
    if (t.rank() != 4 || t.dim(1) != T || t.dim(2) != h || t.dim(3) != w) {
      throw std::invalid_argument(std::string("forward: ") + what + " input has shape " + to_string(t.shape()) +
                                  ", expected [N," + std::to_string(T) + "," + std::to_string(h) + "," +
                                  std::to_string(w) + "]");
    }
  };
  check("RA", in.ra, R, A);
  const std::size_t N = in.ra.dim(0);
  const bool doppler = config_.variant != ModelVariant::ra_only;
  if (doppler) {
    check("RD", in.rd, R, D);
    check("AD", in.ad, A, D);
    if (in.rd.dim(0) != N || in.ad.dim(0) != N) throw std::invalid_argument("forward: batch sizes differ");
  }

  Tensor f_ra = in.ra;
  for (const auto& b : enc_ra_) f_ra = run_block(b, f_ra, training);

  Tensor fused = f_ra;
  Tensor quarter;
  Tensor top;
  if (config_.variant == ModelVariant::cross_attention) {
    Tensor f_rd = in.rd, f_ad = in.ad;
    for (const auto& b : enc_rd_) f_rd = run_block(b, f_rd, training);
    for (const auto& b : enc_ad_) f_ad = run_block(b, f_ad, training);
    fused = cross_attention(f_ra, f_rd, f_ad, params_[ln_gamma_].value, params_[ln_beta_].value);
    top = decode(decoders_[0], fused, training, &quarter);
  } else if (config_.variant == ModelVariant::ra_only) {
    top = decode(decoders_[0], fused, training, &quarter);
  } else {
    throw std::logic_error("forward: the three_decoder variant is built for parameter accounting only");
  }

  NetworkOutput out;
  out.heatmap = sigmoid(run_head(heat_, top));
  out.offset = sigmoid(run_head(off_, top));
  out.heading = tanh(run_head(head_, quarter));
  return out;
}

// Checkpoint layout: "RADDETCK", u32 version, u64 header length, JSON header
// (config, tensor index, extra), then each tensor's values as little-endian
// float64 in index order.
namespace {

constexpr char kMagic[8] = {'R', 'A', 'D', 'D', 'E', 'T', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
void put_le(std::ostream& os, U v) {
  unsigned char b[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <typename U>
U get_le(std::istream& is) {
  unsigned char b[sizeof(U)];
  is.read(reinterpret_cast<char*>(b), sizeof(U));
  if (!is) throw std::runtime_error("checkpoint truncated");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
  return v;
}

json config_to_json(const ModelConfig& c) {
  const auto& g = c.geometry;
  return {{"geometry",
           {{"r_bins", g.r_bins},
            {"a_bins", g.a_bins},
            {"d_bins", g.d_bins},
            {"r_max_m", g.r_max_m},
            {"fov_deg", g.fov_deg},
            {"v_max_mps", g.v_max_mps}}},
          {"t_frames", c.t_frames},
          {"enc_channels", c.enc_channels},
          {"enc_strides", c.enc_strides},
          {"doppler_strides", c.doppler_strides},
          {"dec_channels", c.dec_channels},
          {"variant", to_string(c.variant)},
          {"heatmap_prior", c.heatmap_prior}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  const auto& g = j.at("geometry");
  c.geometry.r_bins = g.at("r_bins");
  c.geometry.a_bins = g.at("a_bins");
  c.geometry.d_bins = g.at("d_bins");
  c.geometry.r_max_m = g.at("r_max_m");
  c.geometry.fov_deg = g.at("fov_deg");
  c.geometry.v_max_mps = g.at("v_max_mps");
  c.t_frames = j.at("t_frames");
  c.enc_channels = j.at("enc_channels").get<std::vector<int>>();
  c.enc_strides = j.at("enc_strides").get<std::vector<int>>();
  c.doppler_strides = j.at("doppler_strides").get<std::vector<int>>();
  c.dec_channels = j.at("dec_channels").get<std::vector<int>>();
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.heatmap_prior = j.at("heatmap_prior");
  return c;
}

}  // namespace

void Model::save(const std::filesystem::path& path, const std::string& extra_json) const {
  json header;
  header["config"] = config_to_json(config_);
  header["tensors"] = json::array();
  for (const auto& p : params_) {
    header["tensors"].push_back({{"name", p.name}, {"shape", p.value.shape()}});
  }
  for (const auto& [name, st] : bn_) {
    header["tensors"].push_back({{"name", name + ".running_mean"}, {"shape", {st.running_mean.size()}}});
    header["tensors"].push_back({{"name", name + ".running_var"}, {"shape", {st.running_var.size()}}});
  }
  header["extra"] = json::parse(extra_json);
  const std::string h = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(kMagic, 8);
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint64_t>(out, h.size());
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  auto write_values = [&](std::span<const double> v) {
    for (double x : v) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(x));
  };
  for (const auto& p : params_) write_values(p.value.data());
  for (const auto& [name, st] : bn_) {
    write_values(st.running_mean);
    write_values(st.running_var);
  }
  if (!out) throw std::runtime_error("write failed for checkpoint " + path.string());
}

Model Model::load(const std::filesystem::path& path, std::string* extra_json) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("missing checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error(path.string() + " is not a checkpoint");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kVersion) {
    throw std::runtime_error("checkpoint " + path.string() + " has unsupported version " + std::to_string(version));
  }
  const auto hlen = get_le<std::uint64_t>(in);
  if (hlen > (1u << 26)) throw std::runtime_error("checkpoint header too large");
  std::string h(hlen, '\0');
  in.read(h.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw std::runtime_error("checkpoint truncated");
  json header;
  try {
    header = json::parse(h);
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint header is not valid JSON: " + std::string(e.what()));
  }
  Model m(config_from_json(header.at("config")), 0);
  const auto& index = header.at("tensors");
  if (index.size() != m.params_.size() + 2 * m.bn_.size()) {
    throw std::runtime_error("checkpoint tensor count does not match its config");
  }
  auto read_into = [&](const json& entry, const std::string& name, std::span<double> dst) {
    if (entry.at("name").get<std::string>() != name) {
      throw std::runtime_error("checkpoint tensor '" + entry.at("name").get<std::string>() + "' where '" + name +
                               "' was expected");
    }
    for (auto& x : dst) x = std::bit_cast<double>(get_le<std::uint64_t>(in));
  };
  std::size_t k = 0;
  for (auto& p : m.params_) {
    if (index[k].at("shape").get<Shape>() != p.value.shape()) {
      throw std::runtime_error("checkpoint tensor '" + p.name + "' has the wrong shape");
    }
    read_into(index[k++], p.name, p.value.data_mut());
  }
  for (auto& [name, st] : m.bn_) {
    read_into(index[k++], name + ".running_mean", st.running_mean);
    read_into(index[k++], name + ".running_var", st.running_var);
  }
  if (extra_json) *extra_json = header.value("extra", json::object()).dump();
  return m;
}

bool Model::same_state(const Model& other) const {
  if (params_.size() != other.params_.size() || bn_.size() != other.bn_.size()) return false;
  auto eq = [](std::span<const double> a, std::span<const double> b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
  };
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name != other.params_[i].name || !eq(params_[i].value.data(), other.params_[i].value.data()))
      return false;
  }
  for (std::size_t i = 0; i < bn_.size(); ++i) {
    if (!eq(bn_[i].second.running_mean, other.bn_[i].second.running_mean) ||
        !eq(bn_[i].second.running_var, other.bn_[i].second.running_var))
      return false;
  }
  return true;
}

ModelInput make_input(const std::vector<RadarFrame>& stack) {
  if (stack.empty()) throw std::invalid_argument("make_input: empty frame stack");
  const auto& g = stack[0].geometry;
  const std::size_t T = stack.size(), R = g.r_bins, A = g.a_bins, D = g.d_bins;
  std::vector<double> ra, rd, ad;
  ra.reserve(T * R * A);
  rd.reserve(T * R * D);
  ad.reserve(T * A * D);
  for (const auto& f : stack) {
    if (!(f.geometry == g)) throw std::invalid_argument("make_input: frames have different geometry");
    ra.insert(ra.end(), f.ra.begin(), f.ra.end());
    rd.insert(rd.end(), f.rd.begin(), f.rd.end());
    ad.insert(ad.end(), f.ad.begin(), f.ad.end());
  }
  return {Tensor({1, T, R, A}, std::move(ra)), Tensor({1, T, R, D}, std::move(rd)),
          Tensor({1, T, A, D}, std::move(ad))};
}

ModelInput batch_inputs(const std::vector<ModelInput>& samples) {
  if (samples.empty()) throw std::invalid_argument("batch_inputs: no samples");
  auto cat = [&](auto member) {
    Shape shape = (samples[0].*member).shape();
    std::vector<double> v;
    for (const auto& s : samples) {
      const auto d = (s.*member).data();
      v.insert(v.end(), d.begin(), d.end());
    }
    shape[0] = samples.size();
    return Tensor(shape, std::move(v));
  };
  return {cat(&ModelInput::ra), cat(&ModelInput::rd), cat(&ModelInput::ad)};
}

}  // namespace raddet
