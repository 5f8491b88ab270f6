#include "gazemil/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "json.hpp"

#include "gazemil/errors.hpp"

namespace gazemil {

using Eigen::Index;
using nlohmann::json;

namespace {

void fill_uniform(Matrix& m, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
}
void fill_uniform(Vector& v, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Index i = 0; i < v.size(); ++i) v(i) = dist(rng);
}

TensorRef ref(const std::string& name, Matrix& m) {
  return {name, m.rows(), m.cols(), std::span<double>(m.data(), static_cast<std::size_t>(m.size()))};
}
TensorRef ref(const std::string& name, Vector& v) {
  return {name, v.rows(), 1, std::span<double>(v.data(), static_cast<std::size_t>(v.size()))};
}

Vector softmax(const Vector& logits) {
  Vector e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

// Vector-Jacobian product of softmax: returns dlogits for upstream dp.
Vector softmax_backward(const Vector& p, const Vector& dp) {
  return p.cwiseProduct(dp - Vector::Constant(p.size(), p.dot(dp)));
}

Matrix embed(const Matrix& features, const BranchParams& b) {
  return ((features * b.proj_w).rowwise() + b.proj_b.transpose()).array().tanh().matrix();
}

// Which branch's embeddings (source) and attention weights (owner) produce
// the pooling weights of branch `target`.
std::pair<int, int> attention_route(ModelMode mode, int target) {
  if (!mode.dual || mode.attention == AttentionMode::independent) return {target, target};
  const int peer = 1 - target;
  return {peer, peer};
}

}  // namespace

BranchParams BranchParams::make(int q, int d, int a, std::uint64_t seed) {
  if (q < 1 || d < 1 || a < 1) throw InputError("branch dimensions must be positive");
  Rng rng(mix_seed(seed));
  BranchParams b;
  b.proj_w = Matrix(q, d);
  b.attn_v = Matrix(d, a);
  b.attn_w = Vector(a);
  b.cls_w = Matrix(d, 2);
  fill_uniform(b.proj_w, std::sqrt(3.0 / q), rng);
  fill_uniform(b.attn_v, std::sqrt(3.0 / d), rng);
  fill_uniform(b.attn_w, std::sqrt(3.0 / a), rng);
  fill_uniform(b.cls_w, std::sqrt(3.0 / d), rng);
  b.proj_b = Vector::Zero(d);
  b.cls_b = Vector::Zero(2);
  return b;
}

std::vector<TensorRef> BranchParams::tensors(const std::string& prefix) {
  return {ref(prefix + ".proj_w", proj_w), ref(prefix + ".proj_b", proj_b),
          ref(prefix + ".attn_v", attn_v), ref(prefix + ".attn_w", attn_w),
          ref(prefix + ".cls_w", cls_w),   ref(prefix + ".cls_b", cls_b)};
}

DcamilParams DcamilParams::make(const DcamilConfig& config) {
  if (config.seed_branch1 == config.seed_branch2) {
    throw InputError("branch seeds must differ so the two branches start apart");
  }
  DcamilParams p;
  p.config = config;
  p.encoder = Encoder::make(config.encoder, config.seed_encoder);
  const int q = p.encoder.output_dim();
  p.branch[0] = BranchParams::make(q, config.embed_dim, config.attn_dim, config.seed_branch1);
  p.branch[1] = BranchParams::make(q, config.embed_dim, config.attn_dim, config.seed_branch2);
  p.domain = DomainHead::make(q, config.domain_hidden, config.domains, config.seed_domain);
  return p;
}

DcamilParams DcamilParams::zeros_like() const {
  DcamilParams z = *this;
  auto refs = z.tensors();
  zero_tensors(refs);
  return z;
}

std::vector<TensorRef> DcamilParams::tensors() {
  std::vector<TensorRef> refs = encoder.tensors("encoder");
  for (int j = 0; j < 2; ++j) {
    auto b = branch[static_cast<std::size_t>(j)].tensors("branch" + std::to_string(j + 1));
    refs.insert(refs.end(), b.begin(), b.end());
  }
  auto d = domain.tensors("domain");
  refs.insert(refs.end(), d.begin(), d.end());
  return refs;
}

std::vector<TensorRef> DcamilParams::tensors() const {
  return const_cast<DcamilParams*>(this)->tensors();
}

bool DcamilParams::all_finite() const {
  for (const auto& t : tensors()) {
    for (double v : t.values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

Activation prepare_patches(const EncoderConfig& config, std::span<const Patch> patches) {
  const int pool = config.preset == EncoderPreset::small_cnn ? config.input_pool : 1;
  const int side = kPatchSize / pool;
  Activation a(static_cast<int>(patches.size()), 3, side, side);
  const double scale = 1.0 / (255.0 * pool * pool);
  for (std::size_t item = 0; item < patches.size(); ++item) {
    const Image8& px = patches[item].pixels();
    if (px.width != kPatchSize || px.height != kPatchSize || px.channels != 3) {
      throw InputError("encoder expects 224x224x3 patches");
    }
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        double acc[3] = {0.0, 0.0, 0.0};
        for (int dy = 0; dy < pool; ++dy) {
          for (int dx = 0; dx < pool; ++dx) {
            for (int c = 0; c < 3; ++c) acc[c] += px.at(x * pool + dx, y * pool + dy, c);
          }
        }
        const Index col = a.column(static_cast<int>(item), y, x);
        for (int c = 0; c < 3; ++c) a.data(c, col) = acc[c] * scale;
      }
    }
  }
  return a;
}

Matrix encode_instances(const DcamilParams& params, const InstanceBag& bag) {
  bag.validate();
  return params.encoder.forward(prepare_patches(params.config.encoder, bag.instances), nullptr);
}

Vector attention_weights(const Matrix& h, const Matrix& v, const Vector& w) {
  if (h.rows() == 0) throw InputError("attention over an empty bag");
  if (h.cols() != v.rows() || v.cols() != w.size()) {
    throw InputError("attention weight shapes do not match the embeddings");
  }
  Matrix hidden = (h * v).array().tanh().matrix();
  return softmax(hidden * w);
}

std::pair<Vector, Vector> cross_attention(const Matrix& h1, const Matrix& h2,
                                          const DcamilParams& params) {
  if (h1.rows() != h2.rows() || h1.cols() != h2.cols()) {
    throw InputError("cross_attention: branch embeddings differ in shape");
  }
  const auto& b1 = params.branch[0];
  const auto& b2 = params.branch[1];
  return {attention_weights(h2, b2.attn_v, b2.attn_w),
          attention_weights(h1, b1.attn_v, b1.attn_w)};
}

ForwardOutput forward_prepared(const DcamilParams& params, const Activation& prepared,
                               ModelMode mode, ForwardTape* tape) {
  if (prepared.n == 0) throw InputError("forward: bag has no instances");
  ForwardOutput out;
  out.features = params.encoder.forward(prepared, tape ? &tape->encoder : nullptr);
  out.h1 = embed(out.features, params.branch[0]);
  if (mode.dual) out.h2 = embed(out.features, params.branch[1]);

  const int heads = mode.dual ? 2 : 1;
  for (int t = 0; t < heads; ++t) {
    const auto [source, owner] = attention_route(mode, t);
    const Matrix& hs = source == 0 ? out.h1 : out.h2;
    const BranchParams& bo = params.branch[static_cast<std::size_t>(owner)];
    Matrix hidden = (hs * bo.attn_v).array().tanh().matrix();
    Vector att = softmax(hidden * bo.attn_w);
    const Matrix& ht = t == 0 ? out.h1 : out.h2;
    Vector pooled = ht.transpose() * att;
    const BranchParams& bt = params.branch[static_cast<std::size_t>(t)];
    Vector probs = softmax(bt.cls_w.transpose() * pooled + bt.cls_b);
    if (tape != nullptr) tape->attention[static_cast<std::size_t>(t)] = {source, owner, hidden};
    if (t == 0) {
      out.att1 = std::move(att);
      out.bag1 = std::move(pooled);
      out.p1 = std::move(probs);
    } else {
      out.att2 = std::move(att);
      out.bag2 = std::move(pooled);
      out.p2 = std::move(probs);
    }
  }
  return out;
}

ForwardOutput forward_bag(const DcamilParams& params, const InstanceBag& bag, ModelMode mode) {
  bag.validate();
  return forward_prepared(params, prepare_patches(params.config.encoder, bag.instances), mode);
}

void backward_bag(const DcamilParams& params, ModelMode mode, const ForwardOutput& out,
                  const ForwardTape& tape, const OutputGradients& up, DcamilParams& grad) {
  const Index k = out.h1.rows();
  const Index d = out.h1.cols();
  std::array<Matrix, 2> dh{Matrix::Zero(k, d), Matrix::Zero(k, d)};
  if (up.d_h1.size() > 0) dh[0] += up.d_h1;
  if (mode.dual && up.d_h2.size() > 0) dh[1] += up.d_h2;

  const int heads = mode.dual ? 2 : 1;
  for (int t = 0; t < heads; ++t) {
    const Vector& dp = t == 0 ? up.d_p1 : up.d_p2;
    if (dp.size() == 0) continue;
    const std::size_t ti = static_cast<std::size_t>(t);
    const Vector& p = t == 0 ? out.p1 : out.p2;
    const Vector& pooled = t == 0 ? out.bag1 : out.bag2;
    const Vector& att = t == 0 ? out.att1 : out.att2;
    const Matrix& ht = t == 0 ? out.h1 : out.h2;
    const BranchParams& bt = params.branch[ti];
    BranchParams& gt = grad.branch[ti];

    const Vector dlogits = softmax_backward(p, dp);
    gt.cls_w.noalias() += pooled * dlogits.transpose();
    gt.cls_b += dlogits;
    const Vector dpooled = bt.cls_w * dlogits;
    // pooled = ht^T att
    dh[ti].noalias() += att * dpooled.transpose();
    const Vector datt = ht * dpooled;

    const AttentionTape& at = tape.attention[ti];
    const BranchParams& bo = params.branch[static_cast<std::size_t>(at.owner)];
    BranchParams& go = grad.branch[static_cast<std::size_t>(at.owner)];
    const Matrix& hs = at.source == 0 ? out.h1 : out.h2;
    const Vector de = softmax_backward(att, datt);
    go.attn_w.noalias() += at.hidden.transpose() * de;
    const Matrix dpre =
        (de * bo.attn_w.transpose()).cwiseProduct((1.0 - at.hidden.array().square()).matrix());
    go.attn_v.noalias() += hs.transpose() * dpre;
    dh[static_cast<std::size_t>(at.source)].noalias() += dpre * bo.attn_v.transpose();
  }

  Matrix dfeatures = Matrix::Zero(out.features.rows(), out.features.cols());
  if (up.d_features.size() > 0) dfeatures += up.d_features;
  for (int j = 0; j < heads; ++j) {
    const std::size_t ji = static_cast<std::size_t>(j);
    const Matrix& h = j == 0 ? out.h1 : out.h2;
    const Matrix dz = dh[ji].cwiseProduct((1.0 - h.array().square()).matrix());
    grad.branch[ji].proj_w.noalias() += out.features.transpose() * dz;
    grad.branch[ji].proj_b += dz.colwise().sum().transpose();
    dfeatures.noalias() += dz * params.branch[ji].proj_w.transpose();
  }
  params.encoder.backward(tape.encoder, dfeatures, grad.encoder);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'G', 'Z', 'M', 'I', 'L', 'C', 'K', '1'};
constexpr std::uint32_t kVersion = 1;

json config_to_json(const DcamilConfig& c) {
  return json{{"encoder",
               {{"preset", to_string(c.encoder.preset)},
                {"output_dim", c.encoder.output_dim},
                {"small_channels", c.encoder.small_channels},
                {"input_pool", c.encoder.input_pool},
                {"resnet_width", c.encoder.resnet_width}}},
              {"embed_dim", c.embed_dim},
              {"attn_dim", c.attn_dim},
              {"domains", c.domains},
              {"domain_hidden", c.domain_hidden},
              {"seed_encoder", c.seed_encoder},
              {"seed_branch1", c.seed_branch1},
              {"seed_branch2", c.seed_branch2},
              {"seed_domain", c.seed_domain}};
}

DcamilConfig config_from_json(const json& j) {
  DcamilConfig c;
  const json& e = j.at("encoder");
  c.encoder.preset = parse_encoder_preset(e.at("preset").get<std::string>());
  c.encoder.output_dim = e.at("output_dim").get<int>();
  c.encoder.small_channels = e.at("small_channels").get<std::vector<int>>();
  c.encoder.input_pool = e.at("input_pool").get<int>();
  c.encoder.resnet_width = e.at("resnet_width").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.attn_dim = j.at("attn_dim").get<int>();
  c.domains = j.at("domains").get<int>();
  c.domain_hidden = j.at("domain_hidden").get<int>();
  c.seed_encoder = j.at("seed_encoder").get<std::uint64_t>();
  c.seed_branch1 = j.at("seed_branch1").get<std::uint64_t>();
  c.seed_branch2 = j.at("seed_branch2").get<std::uint64_t>();
  c.seed_domain = j.at("seed_domain").get<std::uint64_t>();
  return c;
}

struct CheckpointFile {
  json header;
  std::vector<double> payload;
};

CheckpointFile read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) {
    throw IoError(path.string() + " is not a checkpoint file");
  }
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  is.read(reinterpret_cast<char*>(&version), sizeof version);
  is.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
  if (!is || version != kVersion) {
    throw IoError(path.string() + ": unsupported checkpoint version");
  }
  std::string text(header_len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(header_len));
  CheckpointFile f;
  try {
    f.header = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": corrupt checkpoint header: " + e.what());
  }
  std::size_t total = 0;
  for (const auto& t : f.header.at("tensors")) {
    total += t.at("rows").get<std::size_t>() * t.at("cols").get<std::size_t>();
  }
  f.payload.resize(total);
  is.read(reinterpret_cast<char*>(f.payload.data()),
          static_cast<std::streamsize>(total * sizeof(double)));
  if (is.gcount() != static_cast<std::streamsize>(total * sizeof(double))) {
    throw IoError(path.string() + ": truncated checkpoint payload");
  }
  return f;
}

void copy_payload(const CheckpointFile& f, DcamilParams& params, const std::string& source) {
  auto refs = params.tensors();
  const json& tensors = f.header.at("tensors");
  if (tensors.size() != refs.size()) {
    throw InputError(source + ": checkpoint has " + std::to_string(tensors.size()) +
                     " tensors, model has " + std::to_string(refs.size()));
  }
  std::size_t offset = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& t = tensors[i];
    const auto rows = t.at("rows").get<Index>();
    const auto cols = t.at("cols").get<Index>();
    const auto name = t.at("name").get<std::string>();
    if (name != refs[i].name || rows != refs[i].rows || cols != refs[i].cols) {
      throw InputError(source + ": shape mismatch for tensor " + refs[i].name + " (checkpoint " +
                       name + " " + std::to_string(rows) + "x" + std::to_string(cols) +
                       ", model " + std::to_string(refs[i].rows) + "x" +
                       std::to_string(refs[i].cols) + ")");
    }
    std::copy_n(f.payload.begin() + static_cast<std::ptrdiff_t>(offset), refs[i].values.size(),
                refs[i].values.begin());
    offset += refs[i].values.size();
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const DcamilParams& params) {
  json header;
  header["config"] = config_to_json(params.config);
  header["tensors"] = json::array();
  for (const auto& t : params.tensors()) {
    header["tensors"].push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}});
  }
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os.write(kMagic, 8);
  const std::uint64_t len = text.size();
  os.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
  os.write(reinterpret_cast<const char*>(&len), sizeof len);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : params.tensors()) {
    os.write(reinterpret_cast<const char*>(t.values.data()),
             static_cast<std::streamsize>(t.values.size() * sizeof(double)));
  }
  if (!os) throw IoError("write failed: " + path.string());
}

DcamilParams load_checkpoint(const std::filesystem::path& path) {
  CheckpointFile f = read_checkpoint_file(path);
  DcamilParams params = DcamilParams::make(config_from_json(f.header.at("config")));
  copy_payload(f, params, path.string());
  return params;
}

void load_checkpoint_into(const std::filesystem::path& path, DcamilParams& params) {
  CheckpointFile f = read_checkpoint_file(path);
  copy_payload(f, params, path.string());
}

}  // namespace gazemil
