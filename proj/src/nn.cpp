#include "gazemil/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include "gazemil/errors.hpp"

namespace gazemil {

using Eigen::Index;

Conv2d Conv2d::make(int in_ch, int out_ch, int kernel, int stride, int pad) {
  Conv2d c;
  c.in_ch = in_ch;
  c.out_ch = out_ch;
  c.kernel = kernel;
  c.stride = stride;
  c.pad = pad;
  c.weight = Matrix::Zero(out_ch, static_cast<Index>(kernel) * kernel * in_ch);
  c.bias = Vector::Zero(out_ch);
  return c;
}

Activation conv_forward(const Conv2d& conv, const Activation& in, ConvTape* tape) {
  if (in.c != conv.in_ch) {
    throw InputError("conv: expected " + std::to_string(conv.in_ch) + " input channels, got " +
                     std::to_string(in.c));
  }
  const int ho = conv.out_extent(in.h), wo = conv.out_extent(in.w);
  const int k = conv.kernel, cin = in.c;
  const Index ncols = static_cast<Index>(in.n) * ho * wo;
  Matrix cols(static_cast<Index>(k) * k * cin, ncols);
  for (int item = 0; item < in.n; ++item) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        double* dst = cols.col((static_cast<Index>(item) * ho + oy) * wo + ox).data();
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * conv.stride - conv.pad + ky;
          for (int kx = 0; kx < k; ++kx, dst += cin) {
            const int ix = ox * conv.stride - conv.pad + kx;
            if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) {
              std::fill(dst, dst + cin, 0.0);
            } else {
              std::memcpy(dst, in.data.col(in.column(item, iy, ix)).data(),
                          sizeof(double) * static_cast<std::size_t>(cin));
            }
          }
        }
      }
    }
  }
  Activation out;
  out.n = in.n;
  out.c = conv.out_ch;
  out.h = ho;
  out.w = wo;
  out.data.noalias() = conv.weight * cols;
  out.data.colwise() += conv.bias;
  if (tape != nullptr) {
    tape->n = in.n;
    tape->h_in = in.h;
    tape->w_in = in.w;
    tape->h_out = ho;
    tape->w_out = wo;
    tape->cols = std::move(cols);
  }
  return out;
}

Activation conv_backward(const Conv2d& conv, const ConvTape& tape, const Activation& dout,
                         Conv2d& grad) {
  grad.weight.noalias() += dout.data * tape.cols.transpose();
  grad.bias += dout.data.rowwise().sum();
  const Matrix dcols = conv.weight.transpose() * dout.data;
  Activation din(tape.n, conv.in_ch, tape.h_in, tape.w_in);
  const int k = conv.kernel, cin = conv.in_ch;
  for (int item = 0; item < tape.n; ++item) {
    for (int oy = 0; oy < tape.h_out; ++oy) {
      for (int ox = 0; ox < tape.w_out; ++ox) {
        const double* src =
            dcols.col((static_cast<Index>(item) * tape.h_out + oy) * tape.w_out + ox).data();
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * conv.stride - conv.pad + ky;
          for (int kx = 0; kx < k; ++kx, src += cin) {
            const int ix = ox * conv.stride - conv.pad + kx;
            if (iy < 0 || iy >= tape.h_in || ix < 0 || ix >= tape.w_in) continue;
            double* dst = din.data.col(din.column(item, iy, ix)).data();
            for (int c = 0; c < cin; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
  return din;
}

namespace {

Activation relu_forward(const Activation& in) {
  Activation out = in;
  out.data = in.data.cwiseMax(0.0);
  return out;
}

Activation relu_backward(const Activation& out, const Activation& dout) {
  Activation din = dout;
  din.data = (out.data.array() > 0.0).select(dout.data, 0.0);
  return din;
}

Activation maxpool_forward(const MaxPool& p, const Activation& in, PoolTape* tape) {
  const int ho = (in.h + 2 * p.pad - p.kernel) / p.stride + 1;
  const int wo = (in.w + 2 * p.pad - p.kernel) / p.stride + 1;
  Activation out(in.n, in.c, ho, wo);
  std::vector<Index> argmax(static_cast<std::size_t>(out.data.size()));
  for (int item = 0; item < in.n; ++item) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        const Index ocol = out.column(item, oy, ox);
        for (int c = 0; c < in.c; ++c) {
          double best = -std::numeric_limits<double>::infinity();
          Index best_idx = -1;
          for (int ky = 0; ky < p.kernel; ++ky) {
            const int iy = oy * p.stride - p.pad + ky;
            if (iy < 0 || iy >= in.h) continue;
            for (int kx = 0; kx < p.kernel; ++kx) {
              const int ix = ox * p.stride - p.pad + kx;
              if (ix < 0 || ix >= in.w) continue;
              const Index icol = in.column(item, iy, ix);
              const double v = in.data(c, icol);
              if (v > best) {
                best = v;
                best_idx = icol * in.c + c;
              }
            }
          }
          out.data(c, ocol) = best;
          argmax[static_cast<std::size_t>(ocol * in.c + c)] = best_idx;
        }
      }
    }
  }
  if (tape != nullptr) {
    *tape = PoolTape{in.n, in.c, in.h, in.w, ho, wo, std::move(argmax)};
  }
  return out;
}

Activation maxpool_backward(const PoolTape& tape, const Activation& dout) {
  Activation din(tape.n, tape.c, tape.h_in, tape.w_in);
  double* dst = din.data.data();
  const double* src = dout.data.data();
  for (std::size_t i = 0; i < tape.argmax.size(); ++i) dst[tape.argmax[i]] += src[i];
  return din;
}

Activation gap_forward(const Activation& in, GapTape* tape) {
  Activation out(in.n, in.c, 1, 1);
  const Index hw = static_cast<Index>(in.h) * in.w;
  for (int item = 0; item < in.n; ++item) {
    out.data.col(item) = in.data.middleCols(item * hw, hw).rowwise().sum() / static_cast<double>(hw);
  }
  if (tape != nullptr) *tape = GapTape{in.n, in.c, in.h, in.w};
  return out;
}

Activation gap_backward(const GapTape& tape, const Activation& dout) {
  Activation din(tape.n, tape.c, tape.h, tape.w);
  const Index hw = static_cast<Index>(tape.h) * tape.w;
  for (int item = 0; item < tape.n; ++item) {
    din.data.middleCols(item * hw, hw).colwise() = dout.data.col(item) / static_cast<double>(hw);
  }
  return din;
}

Activation residual_forward(const ResidualBlock& b, const Activation& in, ResidualTape* tape) {
  ConvTape t1, t2, ts;
  Activation a = conv_forward(b.conv1, in, tape ? &t1 : nullptr);
  Activation mid = relu_forward(a);
  Activation out = conv_forward(b.conv2, mid, tape ? &t2 : nullptr);
  if (b.shortcut) {
    out.data += conv_forward(*b.shortcut, in, tape ? &ts : nullptr).data;
  } else {
    out.data += in.data;
  }
  out = relu_forward(out);
  if (tape != nullptr) {
    tape->conv1 = std::move(t1);
    tape->mid = std::move(mid);
    tape->conv2 = std::move(t2);
    if (b.shortcut) tape->shortcut = std::move(ts);
    tape->out = out;
  }
  return out;
}

Activation residual_backward(const ResidualBlock& b, const ResidualTape& tape,
                             const Activation& dout, ResidualBlock& grad) {
  Activation d = relu_backward(tape.out, dout);
  Activation dmid = conv_backward(b.conv2, tape.conv2, d, grad.conv2);
  Activation da = relu_backward(tape.mid, dmid);
  Activation din = conv_backward(b.conv1, tape.conv1, da, grad.conv1);
  if (b.shortcut) {
    din.data += conv_backward(*b.shortcut, *tape.shortcut, d, *grad.shortcut).data;
  } else {
    din.data += d.data;
  }
  return din;
}

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void init_conv(Conv2d& c, Rng& rng, double gain) {
  const double fan_in = static_cast<double>(c.kernel) * c.kernel * c.in_ch;
  const double bound = gain * std::sqrt(3.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Index i = 0; i < c.weight.size(); ++i) c.weight.data()[i] = dist(rng);
  c.bias.setZero();
}

ResidualBlock make_block(int in_ch, int out_ch, int stride, Rng& rng) {
  ResidualBlock b;
  b.conv1 = Conv2d::make(in_ch, out_ch, 3, stride, 1);
  init_conv(b.conv1, rng, std::sqrt(2.0));
  b.conv2 = Conv2d::make(out_ch, out_ch, 3, 1, 1);
  if (stride != 1 || in_ch != out_ch) {
    b.shortcut = Conv2d::make(in_ch, out_ch, 1, stride, 0);
    init_conv(*b.shortcut, rng, 1.0);
  }
  return b;
}

void add_conv_refs(std::vector<TensorRef>& refs, Conv2d& c, const std::string& name) {
  refs.push_back({name + ".weight", c.weight.rows(), c.weight.cols(),
                  std::span<double>(c.weight.data(), static_cast<std::size_t>(c.weight.size()))});
  refs.push_back({name + ".bias", c.bias.rows(), 1,
                  std::span<double>(c.bias.data(), static_cast<std::size_t>(c.bias.size()))});
}

}  // namespace

std::string to_string(EncoderPreset p) {
  return p == EncoderPreset::small_cnn ? "small_cnn" : "resnet18";
}

EncoderPreset parse_encoder_preset(const std::string& name) {
  if (name == "small_cnn") return EncoderPreset::small_cnn;
  if (name == "resnet18") return EncoderPreset::resnet18;
  throw InputError("unknown encoder preset '" + name + "' (expected small_cnn or resnet18)");
}

Encoder Encoder::make(const EncoderConfig& config, std::uint64_t seed) {
  Encoder e;
  e.config = config;
  Rng rng(mix_seed(seed));
  const double relu_gain = std::sqrt(2.0);
  if (config.preset == EncoderPreset::small_cnn) {
    if (config.small_channels.size() != 3 || config.output_dim < 1 || config.input_pool < 1) {
      throw InputError("small_cnn encoder needs three stage widths, Q >= 1 and pool >= 1");
    }
    if (224 % config.input_pool != 0) throw InputError("input_pool must divide 224");
    int in = 3;
    std::vector<int> widths = config.small_channels;
    widths.push_back(config.output_dim);
    for (int width : widths) {
      Conv2d c = Conv2d::make(in, width, 3, 2, 1);
      init_conv(c, rng, relu_gain);
      e.layers.emplace_back(std::move(c));
      e.layers.emplace_back(Relu{});
      in = width;
    }
    e.layers.emplace_back(GlobalAvgPool{});
  } else {
    const int w = config.resnet_width;
    if (w < 1) throw InputError("resnet width must be >= 1");
    Conv2d stem = Conv2d::make(3, w, 7, 2, 3);
    init_conv(stem, rng, relu_gain);
    e.layers.emplace_back(std::move(stem));
    e.layers.emplace_back(Relu{});
    e.layers.emplace_back(MaxPool{3, 2, 1});
    int in = w;
    for (int stage = 0; stage < 4; ++stage) {
      const int out = w << stage;
      e.layers.emplace_back(make_block(in, out, stage == 0 ? 1 : 2, rng));
      e.layers.emplace_back(make_block(out, out, 1, rng));
      in = out;
    }
    e.layers.emplace_back(GlobalAvgPool{});
  }
  return e;
}

int Encoder::output_dim() const {
  return config.preset == EncoderPreset::small_cnn ? config.output_dim : 8 * config.resnet_width;
}

int Encoder::prepared_extent() const {
  return config.preset == EncoderPreset::small_cnn ? 224 / config.input_pool : 224;
}

Matrix Encoder::forward(const Activation& prepared, std::vector<LayerTape>* tape) const {
  if (prepared.c != prepared_channels() || prepared.h != prepared_extent() ||
      prepared.w != prepared_extent()) {
    throw InputError("encoder input has shape " + std::to_string(prepared.c) + "x" +
                     std::to_string(prepared.h) + "x" + std::to_string(prepared.w) +
                     ", expected 3x" + std::to_string(prepared_extent()) + "x" +
                     std::to_string(prepared_extent()));
  }
  if (tape != nullptr) {
    tape->clear();
    tape->reserve(layers.size());
  }
  Activation x = prepared;
  for (const Layer& layer : layers) {
    x = std::visit(
        Overloaded{
            [&](const Conv2d& c) {
              if (!tape) return conv_forward(c, x, nullptr);
              ConvTape t;
              Activation y = conv_forward(c, x, &t);
              tape->emplace_back(std::move(t));
              return y;
            },
            [&](const Relu&) {
              Activation y = relu_forward(x);
              if (tape) tape->emplace_back(ReluTape{y});
              return y;
            },
            [&](const MaxPool& p) {
              if (!tape) return maxpool_forward(p, x, nullptr);
              PoolTape t;
              Activation y = maxpool_forward(p, x, &t);
              tape->emplace_back(std::move(t));
              return y;
            },
            [&](const GlobalAvgPool&) {
              if (!tape) return gap_forward(x, nullptr);
              GapTape t;
              Activation y = gap_forward(x, &t);
              tape->emplace_back(t);
              return y;
            },
            [&](const ResidualBlock& b) {
              if (!tape) return residual_forward(b, x, nullptr);
              ResidualTape t;
              Activation y = residual_forward(b, x, &t);
              tape->emplace_back(std::move(t));
              return y;
            },
        },
        layer);
  }
  return x.data.transpose();
}

void Encoder::backward(const std::vector<LayerTape>& tape, const Matrix& dfeatures,
                       Encoder& grad) const {
  if (tape.size() != layers.size()) throw InputError("encoder tape does not match layers");
  Activation d;
  d.n = static_cast<int>(dfeatures.rows());
  d.c = static_cast<int>(dfeatures.cols());
  d.h = 1;
  d.w = 1;
  d.data = dfeatures.transpose();
  for (std::size_t i = layers.size(); i-- > 0;) {
    const Layer& layer = layers[i];
    const LayerTape& t = tape[i];
    Layer& g = grad.layers[i];
    if (const auto* c = std::get_if<Conv2d>(&layer)) {
      if (i == 0) {
        // The input gradient of the first layer is never needed.
        auto& gc = std::get<Conv2d>(g);
        const auto& ct = std::get<ConvTape>(t);
        gc.weight.noalias() += d.data * ct.cols.transpose();
        gc.bias += d.data.rowwise().sum();
        return;
      }
      d = conv_backward(*c, std::get<ConvTape>(t), d, std::get<Conv2d>(g));
    } else if (std::holds_alternative<Relu>(layer)) {
      d = relu_backward(std::get<ReluTape>(t).out, d);
    } else if (std::holds_alternative<MaxPool>(layer)) {
      d = maxpool_backward(std::get<PoolTape>(t), d);
    } else if (std::holds_alternative<GlobalAvgPool>(layer)) {
      d = gap_backward(std::get<GapTape>(t), d);
    } else {
      d = residual_backward(std::get<ResidualBlock>(layer), std::get<ResidualTape>(t), d,
                            std::get<ResidualBlock>(g));
    }
  }
}

std::vector<TensorRef> Encoder::tensors(const std::string& prefix) {
  std::vector<TensorRef> refs;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string name = prefix + "." + std::to_string(i);
    if (auto* c = std::get_if<Conv2d>(&layers[i])) {
      add_conv_refs(refs, *c, name);
    } else if (auto* b = std::get_if<ResidualBlock>(&layers[i])) {
      add_conv_refs(refs, b->conv1, name + ".conv1");
      add_conv_refs(refs, b->conv2, name + ".conv2");
      if (b->shortcut) add_conv_refs(refs, *b->shortcut, name + ".shortcut");
    }
  }
  return refs;
}

void zero_tensors(std::span<TensorRef> tensors) {
  for (auto& t : tensors) std::fill(t.values.begin(), t.values.end(), 0.0);
}

}  // namespace gazemil
