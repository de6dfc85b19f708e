#include "noah/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "noah/error.hpp"

namespace noah {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shapes " + a.shape_str() + " vs " +
                     b.shape_str() + " do not match");
  }
}

void require_upstream(const Tensor& upstream, const Tensor& like, const char* op) {
  if (!upstream.same_shape(like)) {
    throw ShapeError(std::string(op) + ": upstream " + upstream.shape_str() +
                     " does not match forward result " + like.shape_str());
  }
}

std::size_t pixel_count(const Tensor& t) {
  return static_cast<std::size_t>(t.batch()) * t.height() * t.width();
}

}  // namespace

Tensor conv1x1_forward(const Tensor& input, const Matrix& weight,
                       std::span<const float> bias) {
  if (weight.rows() != input.channels()) {
    throw ShapeError("conv1x1: input " + input.shape_str() + " has " +
                     std::to_string(input.channels()) + " channels but weight is " +
                     weight.shape_str());
  }
  const int cin = input.channels();
  const int m = weight.cols();
  if (!bias.empty() && static_cast<int>(bias.size()) != m) {
    throw ShapeError("conv1x1: bias length " + std::to_string(bias.size()) +
                     " does not match weight " + weight.shape_str());
  }

  Tensor out(input.batch(), input.height(), input.width(), m);
  const float* in = input.values().data();
  const float* w = weight.values().data();
  float* o = out.values().data();
  std::vector<double> acc(m);

  const std::size_t pixels = pixel_count(input);
  for (std::size_t p = 0; p < pixels; ++p) {
    const float* px = in + p * cin;
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int c = 0; c < cin; ++c) {
      const double v = px[c];
      const float* row = w + static_cast<std::size_t>(c) * m;
      for (int k = 0; k < m; ++k) acc[k] += v * row[k];
    }
    float* op = o + p * m;
    if (bias.empty()) {
      for (int k = 0; k < m; ++k) op[k] = static_cast<float>(acc[k]);
    } else {
      for (int k = 0; k < m; ++k) op[k] = static_cast<float>(acc[k] + bias[k]);
    }
  }
  detail::check_finite(out, "conv1x1");
  return out;
}

Conv1x1Grads conv1x1_backward(const Tensor& input, const Matrix& weight,
                              const Tensor& upstream, bool with_bias) {
  if (weight.rows() != input.channels()) {
    throw ShapeError("conv1x1 backward: input " + input.shape_str() +
                     " vs weight " + weight.shape_str());
  }
  const int cin = input.channels();
  const int m = weight.cols();
  if (upstream.batch() != input.batch() || upstream.height() != input.height() ||
      upstream.width() != input.width() || upstream.channels() != m) {
    throw ShapeError("conv1x1 backward: upstream " + upstream.shape_str() +
                     " does not match input " + input.shape_str() + " with " +
                     std::to_string(m) + " output channels");
  }

  Conv1x1Grads grads{Tensor(input.batch(), input.height(), input.width(), cin),
                     Matrix(cin, m),
                     {}};
  const float* in = input.values().data();
  const float* up = upstream.values().data();
  const float* w = weight.values().data();
  float* gi = grads.input.values().data();

  std::vector<double> gw(static_cast<std::size_t>(cin) * m, 0.0);
  std::vector<double> gb(with_bias ? m : 0, 0.0);

  const std::size_t pixels = pixel_count(input);
  for (std::size_t p = 0; p < pixels; ++p) {
    const float* px = in + p * cin;
    const float* upx = up + p * m;
    float* gix = gi + p * cin;
    for (int c = 0; c < cin; ++c) {
      const float* row = w + static_cast<std::size_t>(c) * m;
      double* grow = gw.data() + static_cast<std::size_t>(c) * m;
      const double v = px[c];
      double acc = 0.0;
      for (int k = 0; k < m; ++k) {
        acc += static_cast<double>(upx[k]) * row[k];
        grow[k] += v * upx[k];
      }
      gix[c] = static_cast<float>(acc);
    }
    if (with_bias) {
      for (int k = 0; k < m; ++k) gb[k] += upx[k];
    }
  }

  for (int c = 0; c < cin; ++c) {
    for (int k = 0; k < m; ++k) {
      grads.weight.at(c, k) = static_cast<float>(gw[static_cast<std::size_t>(c) * m + k]);
    }
  }
  if (with_bias) {
    grads.bias.resize(m);
    for (int k = 0; k < m; ++k) grads.bias[k] = static_cast<float>(gb[k]);
  }
  detail::check_finite(grads.input, "conv1x1 backward");
  detail::check_finite(grads.weight.values(), "conv1x1 backward");
  return grads;
}

Tensor spatial_softmax(const Tensor& input) {
  Tensor out(input.batch(), input.height(), input.width(), input.channels());
  const int h = input.height(), w = input.width(), ch = input.channels();
  for (int b = 0; b < input.batch(); ++b) {
    for (int c = 0; c < ch; ++c) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) mx = std::max(mx, static_cast<double>(input.at(b, i, j, c)));
      }
      double sum = 0.0;
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) sum += std::exp(input.at(b, i, j, c) - mx);
      }
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
          out.at(b, i, j, c) = static_cast<float>(std::exp(input.at(b, i, j, c) - mx) / sum);
        }
      }
    }
  }
  detail::check_finite(out, "spatial_softmax");
  return out;
}

Tensor spatial_softmax_backward(const Tensor& output, const Tensor& upstream) {
  require_upstream(upstream, output, "spatial_softmax backward");
  Tensor grad(output.batch(), output.height(), output.width(), output.channels());
  const int h = output.height(), w = output.width(), ch = output.channels();
  for (int b = 0; b < output.batch(); ++b) {
    for (int c = 0; c < ch; ++c) {
      double dot = 0.0;
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
          dot += static_cast<double>(upstream.at(b, i, j, c)) * output.at(b, i, j, c);
        }
      }
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
          const double s = output.at(b, i, j, c);
          grad.at(b, i, j, c) = static_cast<float>(s * (upstream.at(b, i, j, c) - dot));
        }
      }
    }
  }
  detail::check_finite(grad, "spatial_softmax backward");
  return grad;
}

Tensor channel_softmax(const Tensor& input) {
  Tensor out(input.batch(), input.height(), input.width(), input.channels());
  const int ch = input.channels();
  const float* in = input.values().data();
  float* o = out.values().data();
  const std::size_t pixels = pixel_count(input);
  for (std::size_t p = 0; p < pixels; ++p) {
    const float* px = in + p * ch;
    float* op = o + p * ch;
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < ch; ++c) mx = std::max(mx, static_cast<double>(px[c]));
    double sum = 0.0;
    for (int c = 0; c < ch; ++c) sum += std::exp(px[c] - mx);
    for (int c = 0; c < ch; ++c) op[c] = static_cast<float>(std::exp(px[c] - mx) / sum);
  }
  detail::check_finite(out, "channel_softmax");
  return out;
}

Tensor channel_softmax_backward(const Tensor& output, const Tensor& upstream) {
  require_upstream(upstream, output, "channel_softmax backward");
  Tensor grad(output.batch(), output.height(), output.width(), output.channels());
  const int ch = output.channels();
  const float* s = output.values().data();
  const float* up = upstream.values().data();
  float* g = grad.values().data();
  const std::size_t pixels = pixel_count(output);
  for (std::size_t p = 0; p < pixels; ++p) {
    const float* sp = s + p * ch;
    const float* upp = up + p * ch;
    float* gp = g + p * ch;
    double dot = 0.0;
    for (int c = 0; c < ch; ++c) dot += static_cast<double>(upp[c]) * sp[c];
    for (int c = 0; c < ch; ++c) {
      gp[c] = static_cast<float>(static_cast<double>(sp[c]) * (upp[c] - dot));
    }
  }
  detail::check_finite(grad, "channel_softmax backward");
  return grad;
}

Tensor sigmoid(const Tensor& input) {
  Tensor out(input.batch(), input.height(), input.width(), input.channels());
  auto in = input.values();
  auto o = out.values();
  for (std::size_t i = 0; i < in.size(); ++i) {
    o[i] = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(in[i]))));
  }
  detail::check_finite(out, "sigmoid");
  return out;
}

Tensor sigmoid_backward(const Tensor& output, const Tensor& upstream) {
  require_upstream(upstream, output, "sigmoid backward");
  Tensor grad(output.batch(), output.height(), output.width(), output.channels());
  auto s = output.values();
  auto up = upstream.values();
  auto g = grad.values();
  for (std::size_t i = 0; i < s.size(); ++i) {
    g[i] = up[i] * s[i] * (1.0f - s[i]);
  }
  detail::check_finite(grad, "sigmoid backward");
  return grad;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  Tensor out(a.batch(), a.height(), a.width(), a.channels());
  auto av = a.values();
  auto bv = b.values();
  auto o = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) o[i] = av[i] * bv[i];
  detail::check_finite(out, "hadamard");
  return out;
}

Tensor relu(const Tensor& input) {
  Tensor out(input.batch(), input.height(), input.width(), input.channels());
  auto in = input.values();
  auto o = out.values();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] > 0.0f ? in[i] : 0.0f;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& upstream) {
  require_upstream(upstream, input, "relu backward");
  Tensor grad(input.batch(), input.height(), input.width(), input.channels());
  auto in = input.values();
  auto up = upstream.values();
  auto g = grad.values();
  for (std::size_t i = 0; i < in.size(); ++i) g[i] = in[i] > 0.0f ? up[i] : 0.0f;
  return grad;
}

Tensor reduce_spatial(const Tensor& input, Reduce mode) {
  Tensor out(input.batch(), 1, 1, input.channels());
  const int h = input.height(), w = input.width(), ch = input.channels();
  for (int b = 0; b < input.batch(); ++b) {
    for (int c = 0; c < ch; ++c) {
      if (mode == Reduce::Max) {
        float best = -std::numeric_limits<float>::infinity();
        for (int i = 0; i < h; ++i) {
          for (int j = 0; j < w; ++j) best = std::max(best, input.at(b, i, j, c));
        }
        out.at(b, 0, 0, c) = best;
      } else {
        double acc = 0.0;
        for (int i = 0; i < h; ++i) {
          for (int j = 0; j < w; ++j) acc += input.at(b, i, j, c);
        }
        if (mode == Reduce::Mean) acc /= static_cast<double>(h) * w;
        out.at(b, 0, 0, c) = static_cast<float>(acc);
      }
    }
  }
  detail::check_finite(out, "reduce_spatial");
  return out;
}

Tensor reduce_spatial_backward(const Tensor& input, const Tensor& upstream, Reduce mode) {
  if (upstream.batch() != input.batch() || upstream.height() != 1 ||
      upstream.width() != 1 || upstream.channels() != input.channels()) {
    throw ShapeError("reduce_spatial backward: upstream " + upstream.shape_str() +
                     " does not match reduced " + input.shape_str());
  }
  Tensor grad(input.batch(), input.height(), input.width(), input.channels());
  const int h = input.height(), w = input.width(), ch = input.channels();
  const float scale = mode == Reduce::Mean ? 1.0f / (static_cast<float>(h) * w) : 1.0f;
  for (int b = 0; b < input.batch(); ++b) {
    for (int c = 0; c < ch; ++c) {
      const float g = upstream.at(b, 0, 0, c);
      if (mode == Reduce::Max) {
        // Ties route the whole gradient to the first maximum in row-major
        // scan order, matching the forward scan.
        int bi = 0, bj = 0;
        float best = -std::numeric_limits<float>::infinity();
        for (int i = 0; i < h; ++i) {
          for (int j = 0; j < w; ++j) {
            if (input.at(b, i, j, c) > best) {
              best = input.at(b, i, j, c);
              bi = i;
              bj = j;
            }
          }
        }
        grad.at(b, bi, bj, c) = g;
      } else {
        for (int i = 0; i < h; ++i) {
          for (int j = 0; j < w; ++j) grad.at(b, i, j, c) = g * scale;
        }
      }
    }
  }
  return grad;
}

std::vector<Tensor> channel_split(const Tensor& input, std::span<const int> sizes) {
  int total = 0;
  for (int s : sizes) {
    if (s < 1) throw ShapeError("channel_split: part sizes must be positive");
    total += s;
  }
  if (total != input.channels()) {
    throw ShapeError("channel_split: part sizes sum to " + std::to_string(total) +
                     " but input is " + input.shape_str());
  }

  std::vector<Tensor> parts;
  parts.reserve(sizes.size());
  const int ch = input.channels();
  const float* in = input.values().data();
  const std::size_t pixels = pixel_count(input);
  int start = 0;
  for (int s : sizes) {
    Tensor part(input.batch(), input.height(), input.width(), s);
    float* o = part.values().data();
    for (std::size_t p = 0; p < pixels; ++p) {
      const float* px = in + p * ch + start;
      std::copy(px, px + s, o + p * s);
    }
    parts.push_back(std::move(part));
    start += s;
  }
  return parts;
}

Tensor channel_concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("channel_concat: no parts");
  int total = parts[0].channels();
  for (std::size_t i = 1; i < parts.size(); ++i) {
    if (parts[i].batch() != parts[0].batch() || parts[i].height() != parts[0].height() ||
        parts[i].width() != parts[0].width()) {
      throw ShapeError("channel_concat: part shapes " + parts[0].shape_str() + " vs " +
                       parts[i].shape_str() + " disagree outside the channel axis");
    }
    total += parts[i].channels();
  }

  Tensor out(parts[0].batch(), parts[0].height(), parts[0].width(), total);
  float* o = out.values().data();
  const std::size_t pixels = pixel_count(out);
  int start = 0;
  for (const Tensor& part : parts) {
    const int s = part.channels();
    const float* in = part.values().data();
    for (std::size_t p = 0; p < pixels; ++p) {
      std::copy(in + p * s, in + (p + 1) * s, o + p * total + start);
    }
    start += s;
  }
  return out;
}

namespace {

void require_conv3x3_args(const Tensor& input, const Conv3x3Weight& weight,
                          std::span<const float> bias, int stride, const char* op) {
  if (stride != 1 && stride != 2) {
    throw ShapeError(std::string(op) + ": stride must be 1 or 2, got " + std::to_string(stride));
  }
  if (weight.in_channels != input.channels()) {
    throw ShapeError(std::string(op) + ": input " + input.shape_str() + " vs kernel with " +
                     std::to_string(weight.in_channels) + " input channels");
  }
  if (weight.values.size() !=
      static_cast<std::size_t>(9) * weight.in_channels * weight.out_channels) {
    throw ShapeError(std::string(op) + ": kernel value count does not match its extents");
  }
  if (!bias.empty() && static_cast<int>(bias.size()) != weight.out_channels) {
    throw ShapeError(std::string(op) + ": bias length " + std::to_string(bias.size()) +
                     " vs " + std::to_string(weight.out_channels) + " output channels");
  }
}

}  // namespace

Tensor conv3x3_forward(const Tensor& input, const Conv3x3Weight& weight,
                       std::span<const float> bias, int stride) {
  require_conv3x3_args(input, weight, bias, stride, "conv3x3");
  const int h = input.height(), w = input.width();
  const int cin = weight.in_channels, cout = weight.out_channels;
  const int oh = (h - 1) / stride + 1;
  const int ow = (w - 1) / stride + 1;

  Tensor out(input.batch(), oh, ow, cout);
  std::vector<double> acc(cout);
  for (int b = 0; b < input.batch(); ++b) {
    for (int oi = 0; oi < oh; ++oi) {
      for (int oj = 0; oj < ow; ++oj) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int kh = 0; kh < 3; ++kh) {
          const int ii = oi * stride + kh - 1;
          if (ii < 0 || ii >= h) continue;  // zero padding
          for (int kw = 0; kw < 3; ++kw) {
            const int jj = oj * stride + kw - 1;
            if (jj < 0 || jj >= w) continue;
            const float* px = input.values().data() + input.pixel_offset(b, ii, jj);
            for (int ci = 0; ci < cin; ++ci) {
              const double v = px[ci];
              const float* row = &weight.at(kh, kw, ci, 0);
              for (int co = 0; co < cout; ++co) acc[co] += v * row[co];
            }
          }
        }
        float* op = out.values().data() + out.pixel_offset(b, oi, oj);
        if (bias.empty()) {
          for (int co = 0; co < cout; ++co) op[co] = static_cast<float>(acc[co]);
        } else {
          for (int co = 0; co < cout; ++co) op[co] = static_cast<float>(acc[co] + bias[co]);
        }
      }
    }
  }
  detail::check_finite(out, "conv3x3");
  return out;
}

Conv3x3Grads conv3x3_backward(const Tensor& input, const Conv3x3Weight& weight,
                              const Tensor& upstream, int stride, bool with_bias) {
  require_conv3x3_args(input, weight, {}, stride, "conv3x3 backward");
  const int h = input.height(), w = input.width();
  const int cin = weight.in_channels, cout = weight.out_channels;
  const int oh = (h - 1) / stride + 1;
  const int ow = (w - 1) / stride + 1;
  if (upstream.batch() != input.batch() || upstream.height() != oh ||
      upstream.width() != ow || upstream.channels() != cout) {
    throw ShapeError("conv3x3 backward: upstream " + upstream.shape_str() +
                     " does not match output geometry [" + std::to_string(input.batch()) +
                     "," + std::to_string(oh) + "," + std::to_string(ow) + "," +
                     std::to_string(cout) + "]");
  }

  Conv3x3Grads grads{Tensor(input.batch(), h, w, cin),
                     Conv3x3Weight{cin, cout,
                                   std::vector<float>(static_cast<std::size_t>(9) * cin * cout)},
                     {}};
  std::vector<double> gi(input.size(), 0.0);
  std::vector<double> gw(grads.weight.values.size(), 0.0);
  std::vector<double> gb(with_bias ? cout : 0, 0.0);

  for (int b = 0; b < input.batch(); ++b) {
    for (int oi = 0; oi < oh; ++oi) {
      for (int oj = 0; oj < ow; ++oj) {
        const float* upx = upstream.values().data() + upstream.pixel_offset(b, oi, oj);
        if (with_bias) {
          for (int co = 0; co < cout; ++co) gb[co] += upx[co];
        }
        for (int kh = 0; kh < 3; ++kh) {
          const int ii = oi * stride + kh - 1;
          if (ii < 0 || ii >= h) continue;
          for (int kw = 0; kw < 3; ++kw) {
            const int jj = oj * stride + kw - 1;
            if (jj < 0 || jj >= w) continue;
            const float* px = input.values().data() + input.pixel_offset(b, ii, jj);
            double* gix = gi.data() + input.pixel_offset(b, ii, jj);
            const std::size_t wbase = (static_cast<std::size_t>(kh) * 3 + kw) * cin * cout;
            for (int ci = 0; ci < cin; ++ci) {
              const float* row = weight.values.data() + wbase + static_cast<std::size_t>(ci) * cout;
              double* grow = gw.data() + wbase + static_cast<std::size_t>(ci) * cout;
              const double v = px[ci];
              double acc = 0.0;
              for (int co = 0; co < cout; ++co) {
                acc += static_cast<double>(upx[co]) * row[co];
                grow[co] += v * upx[co];
              }
              gix[ci] += acc;
            }
          }
        }
      }
    }
  }

  for (std::size_t i = 0; i < gi.size(); ++i) {
    grads.input.values()[i] = static_cast<float>(gi[i]);
  }
  for (std::size_t i = 0; i < gw.size(); ++i) {
    grads.weight.values[i] = static_cast<float>(gw[i]);
  }
  if (with_bias) {
    grads.bias.resize(cout);
    for (int co = 0; co < cout; ++co) grads.bias[co] = static_cast<float>(gb[co]);
  }
  detail::check_finite(grads.input, "conv3x3 backward");
  return grads;
}

}  // namespace noah
