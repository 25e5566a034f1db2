#include "finta/autoencoder.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <thread>

#include "finta/error.hpp"
#include "finta/random.hpp"

namespace finta {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using ColMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

int conv_output_length(int source_length, int kernel, int stride) {
  const int pad = kernel / 2;
  return (source_length + 2 * pad - kernel) / stride + 1;
}

// Unfolds a (cin, batch * lin) activation into (cin * kernel, batch * lout)
// columns. `up` > 1 reads the input as if it had been nearest-neighbour
// upsampled by that factor first, without materializing the copy.
template <typename T>
void im2col(const Mat<T>& x, int batch, int lin, int up, int kernel, int stride, Mat<T>& col) {
  const int lsrc = lin * up;
  const int lout = conv_output_length(lsrc, kernel, stride);
  const int pad = kernel / 2;
  const auto cin = x.rows();
  col.resize(cin * kernel, static_cast<Eigen::Index>(batch) * lout);
  for (Eigen::Index c = 0; c < cin; ++c) {
    const T* src = x.data() + c * x.cols();
    for (int j = 0; j < kernel; ++j) {
      T* dst = col.data() + (c * kernel + j) * col.cols();
      for (int b = 0; b < batch; ++b) {
        const T* s = src + static_cast<std::ptrdiff_t>(b) * lin;
        T* d = dst + static_cast<std::ptrdiff_t>(b) * lout;
        for (int o = 0; o < lout; ++o) {
          const int p = o * stride + j - pad;
          d[o] = (p >= 0 && p < lsrc) ? s[p / up] : T(0);
        }
      }
    }
  }
}

// Adjoint of im2col: scatters column gradients back onto the input.
template <typename T>
void col2im(const Mat<T>& col, int cin, int batch, int lin, int up, int kernel, int stride,
            Mat<T>& dx) {
  const int lsrc = lin * up;
  const int lout = conv_output_length(lsrc, kernel, stride);
  const int pad = kernel / 2;
  dx.setZero(cin, static_cast<Eigen::Index>(batch) * lin);
  for (int c = 0; c < cin; ++c) {
    T* dst = dx.data() + static_cast<std::ptrdiff_t>(c) * dx.cols();
    for (int j = 0; j < kernel; ++j) {
      const T* src = col.data() + (static_cast<Eigen::Index>(c) * kernel + j) * col.cols();
      for (int b = 0; b < batch; ++b) {
        T* d = dst + static_cast<std::ptrdiff_t>(b) * lin;
        const T* s = src + static_cast<std::ptrdiff_t>(b) * lout;
        for (int o = 0; o < lout; ++o) {
          const int p = o * stride + j - pad;
          if (p >= 0 && p < lsrc) d[p / up] += s[o];
        }
      }
    }
  }
}

// Nearest-neighbour 2x upsampling followed by a 'same' convolution. Output
// o = 2i + r only ever reads source samples i + floor((r + j - pad) / 2), so
// each phase r is a convolution of the low-resolution input in which taps
// that land on the same source sample are summed. This skips the redundant
// work on duplicated samples.
int floor_half(int v) { return v >= 0 ? v / 2 : -((-v + 1) / 2); }

struct UpConvPlan {
  int kernel = 0;
  int pad = 0;
  int dmin = 0;  // smallest source offset over both phases
  int dmax = 0;
  int lo[2]{};  // per-phase offset range
  int hi[2]{};

  explicit UpConvPlan(int k) : kernel(k), pad(k / 2) {
    for (int r = 0; r < 2; ++r) {
      lo[r] = offset(r, 0);
      hi[r] = offset(r, k - 1);
    }
    dmin = std::min(lo[0], lo[1]);
    dmax = std::max(hi[0], hi[1]);
  }
  int offset(int r, int j) const { return floor_half(r + j - pad); }
  int span() const { return dmax - dmin + 1; }
  int phase_span(int r) const { return hi[r] - lo[r] + 1; }
};

// (cin, batch * lin) -> (span * cin, batch * lin); row (d - dmin) * cin + c
// holds channel c shifted by d, zero outside each sample.
template <typename T>
void shifted_cols(const Mat<T>& x, int batch, int lin, const UpConvPlan& plan, Mat<T>& col) {
  const auto cin = x.rows();
  col.resize(plan.span() * cin, static_cast<Eigen::Index>(batch) * lin);
  for (int d = plan.dmin; d <= plan.dmax; ++d) {
    for (Eigen::Index c = 0; c < cin; ++c) {
      const T* src = x.data() + c * x.cols();
      T* dst = col.data() + ((d - plan.dmin) * cin + c) * col.cols();
      for (int b = 0; b < batch; ++b) {
        const T* s = src + static_cast<std::ptrdiff_t>(b) * lin;
        T* o = dst + static_cast<std::ptrdiff_t>(b) * lin;
        for (int i = 0; i < lin; ++i) {
          const int p = i + d;
          o[i] = (p >= 0 && p < lin) ? s[p] : T(0);
        }
      }
    }
  }
}

template <typename T>
void shifted_cols_adjoint(const Mat<T>& col, int cin, int batch, int lin, const UpConvPlan& plan,
                          Mat<T>& dx) {
  dx.setZero(cin, static_cast<Eigen::Index>(batch) * lin);
  for (int d = plan.dmin; d <= plan.dmax; ++d) {
    for (int c = 0; c < cin; ++c) {
      const T* src = col.data() + (static_cast<Eigen::Index>(d - plan.dmin) * cin + c) * col.cols();
      T* dst = dx.data() + static_cast<std::ptrdiff_t>(c) * dx.cols();
      for (int b = 0; b < batch; ++b) {
        const T* s = src + static_cast<std::ptrdiff_t>(b) * lin;
        T* o = dst + static_cast<std::ptrdiff_t>(b) * lin;
        for (int i = 0; i < lin; ++i) {
          const int p = i + d;
          if (p >= 0 && p < lin) o[p] += s[i];
        }
      }
    }
  }
}

// Phase-r weights (cout, phase_span * cin) from the (cout, cin * k) kernel.
template <typename T, typename W>
Mat<T> phase_weights(const W& w, int cin, const UpConvPlan& plan, int r) {
  Mat<T> out = Mat<T>::Zero(w.rows(), plan.phase_span(r) * cin);
  for (Eigen::Index o = 0; o < w.rows(); ++o) {
    const T* src = w.data() + o * w.cols();
    T* dst = out.data() + o * out.cols();
    for (int j = 0; j < plan.kernel; ++j) {
      T* d = dst + (plan.offset(r, j) - plan.lo[r]) * cin;
      for (int c = 0; c < cin; ++c) d[c] += src[c * plan.kernel + j];
    }
  }
  return out;
}

// Adjoint of phase_weights: accumulates a phase gradient into the kernel's.
template <typename T, typename G>
void add_phase_gradient(const Mat<T>& g_phase, int cin, const UpConvPlan& plan, int r, G& g) {
  for (Eigen::Index o = 0; o < g.rows(); ++o) {
    const T* src = g_phase.data() + o * g_phase.cols();
    T* dst = g.data() + o * g.cols();
    for (int j = 0; j < plan.kernel; ++j) {
      const T* s = src + (plan.offset(r, j) - plan.lo[r]) * cin;
      for (int c = 0; c < cin; ++c) dst[c * plan.kernel + j] += s[c];
    }
  }
}

template <typename T>
void relu_inplace(Mat<T>& m) {
  m = m.cwiseMax(T(0));
}

template <typename T>
Mat<T> relu_backward(const Mat<T>& grad, const Mat<T>& activation) {
  return (activation.array() > T(0)).select(grad.array(), T(0)).matrix();
}

// (c, batch * len) -> (batch, c * len)
template <typename T>
Mat<T> flatten_samples(const Mat<T>& a, int batch, int len) {
  const auto channels = a.rows();
  Mat<T> f(batch, channels * len);
  for (int b = 0; b < batch; ++b) {
    for (Eigen::Index c = 0; c < channels; ++c) {
      for (int l = 0; l < len; ++l) f(b, c * len + l) = a(c, static_cast<Eigen::Index>(b) * len + l);
    }
  }
  return f;
}

// (batch, c * len) -> (c, batch * len)
template <typename T>
Mat<T> unflatten_samples(const Mat<T>& f, int channels, int len) {
  const auto batch = f.rows();
  Mat<T> a(channels, batch * len);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int c = 0; c < channels; ++c) {
      for (int l = 0; l < len; ++l) a(c, b * len + l) = f(b, static_cast<Eigen::Index>(c) * len + l);
    }
  }
  return a;
}

}  // namespace

// ---------------------------------------------------------------------------
// ModelConfig

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidConfig, what); };
  if (input_channels < 1) fail("input_channels must be positive");
  if (latent_dim < 1) fail("latent_dim must be positive");
  if (kernel_size < 1 || kernel_size % 2 == 0) fail("kernel_size must be odd and positive");
  if (encoder_features.empty()) fail("encoder_features must not be empty");
  for (std::size_t i = 0; i < encoder_features.size(); ++i) {
    if (encoder_features[i] < 1) fail("encoder feature counts must be positive");
    if (i > 0 && encoder_features[i] <= encoder_features[i - 1]) {
      fail("encoder_features must be strictly increasing");
    }
  }
  if (layers() > 20 || input_points < 2) fail("input_points too small for the layer count");
  const int factor = 1 << layers();
  if (input_points % factor != 0) {
    fail("input_points (" + std::to_string(input_points) + ") must be divisible by 2^" +
         std::to_string(layers()));
  }
}

int ModelConfig::encoder_stride(int layer) const {
  if (table_interpretation == TableInterpretation::kOutputSize && layer == 0) return 1;
  return 2;
}

int ModelConfig::bottleneck_length() const {
  int len = input_points;
  for (int i = 0; i < layers(); ++i) len = conv_output_length(len, kernel_size, encoder_stride(i));
  return len;
}

Normalization fit_normalization(const Tractogram& t) {
  double sx = 0, sy = 0, sz = 0;
  std::size_t count = 0;
  for (const auto& s : t.streamlines) {
    for (const auto& p : s) {
      sx += p.x;
      sy += p.y;
      sz += p.z;
      ++count;
    }
  }
  if (count == 0) throw Error(ErrorCode::kEmptyBatch, "cannot fit normalization on no points");
  Normalization n;
  const double inv = 1.0 / static_cast<double>(count);
  n.center = {sx * inv, sy * inv, sz * inv};
  double scale = 0.0;
  for (const auto& s : t.streamlines) {
    for (const auto& p : s) {
      const Point3 d = p - n.center;
      scale = std::max({scale, std::abs(d.x), std::abs(d.y), std::abs(d.z)});
    }
  }
  n.scale = scale > 0.0 ? scale : 1.0;
  return n;
}

// ---------------------------------------------------------------------------
// ConvAutoencoder

template <typename T>
struct ConvAutoencoder<T>::Trace {
  std::vector<Matrix> enc_cols;
  std::vector<Matrix> enc_out;
  Matrix flat;
  Matrix latent;
  std::vector<Matrix> dec_cols;
  std::vector<Matrix> dec_out;
};

template <typename T>
void ConvAutoencoder<T>::layout_blocks() {
  blocks_.clear();
  std::size_t offset = 0;
  auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
    blocks_.push_back({std::move(name), rows, cols, offset});
    offset += rows * cols;
  };
  const auto& f = config_.encoder_features;
  const auto k = static_cast<std::size_t>(config_.kernel_size);
  const int n = config_.layers();
  for (int i = 0; i < n; ++i) {
    const auto cin = static_cast<std::size_t>(i == 0 ? config_.input_channels : f[i - 1]);
    const auto cout = static_cast<std::size_t>(f[i]);
    add("enc" + std::to_string(i) + ".weight", cout, cin * k);
    add("enc" + std::to_string(i) + ".bias", cout, 1);
  }
  const auto deepest = static_cast<std::size_t>(f.back());
  const auto latent = static_cast<std::size_t>(config_.latent_dim);
  add("latent.weight", latent, deepest * static_cast<std::size_t>(config_.bottleneck_length()));
  add("latent.bias", latent, 1);
  add("expand.weight", deepest * static_cast<std::size_t>(config_.expansion_length()), latent);
  add("expand.bias", deepest * static_cast<std::size_t>(config_.expansion_length()), 1);
  for (int j = 0; j < n; ++j) {
    const auto cin = static_cast<std::size_t>(j == 0 ? f.back() : f[n - j]);
    const auto cout = static_cast<std::size_t>(f[n - 1 - j]);
    add("dec" + std::to_string(j) + ".weight", cout, cin * k);
    add("dec" + std::to_string(j) + ".bias", cout, 1);
  }
  add("out.weight", static_cast<std::size_t>(config_.input_channels), static_cast<std::size_t>(f[0]));
  add("out.bias", static_cast<std::size_t>(config_.input_channels), 1);
  params_.assign(offset, T(0));
}

template <typename T>
ConvAutoencoder<T>::ConvAutoencoder(const ModelConfig& config) : config_(config) {
  config_.validate();
  layout_blocks();
  Rng rng(config_.seed);
  for (const auto& b : blocks_) {
    if (b.name.ends_with(".bias")) continue;
    const bool relu_follows = b.name.starts_with("enc") || b.name.starts_with("dec");
    const double fan_in = static_cast<double>(b.cols);
    // He-uniform ahead of a ReLU, LeCun-uniform for the linear layers.
    const double bound = std::sqrt((relu_follows ? 6.0 : 3.0) / fan_in);
    for (std::size_t i = 0; i < b.size(); ++i) {
      params_[b.offset + i] = static_cast<T>(rng.uniform(-bound, bound));
    }
  }
}

template <typename T>
ConvAutoencoder<T> ConvAutoencoder<T>::from_parameters(const ModelConfig& config,
                                                       std::vector<T> params) {
  ConvAutoencoder out;
  out.config_ = config;
  out.config_.validate();
  out.layout_blocks();
  if (params.size() != out.params_.size()) {
    throw Error(ErrorCode::kShapeMismatch, "parameter count " + std::to_string(params.size()) +
                                               " does not match config (" +
                                               std::to_string(out.params_.size()) + ")");
  }
  out.params_.assign(params.begin(), params.end());
  return out;
}

template <typename T>
const ParamBlock& ConvAutoencoder<T>::block(const std::string& name) const {
  for (const auto& b : blocks_) {
    if (b.name == name) return b;
  }
  throw Error(ErrorCode::kInvalidConfig, "no parameter block named " + name);
}

template <typename T>
typename ConvAutoencoder<T>::Matrix ConvAutoencoder<T>::encoder_pass(const Matrix& x, int batch,
                                                                     Trace* trace) const {
  if (x.rows() != config_.input_channels ||
      x.cols() != static_cast<Eigen::Index>(batch) * config_.input_points) {
    throw Error(ErrorCode::kShapeMismatch, "encoder input has the wrong shape");
  }
  const int n = config_.layers();
  const int k = config_.kernel_size;
  Matrix current = x;
  Matrix col;
  int len = config_.input_points;
  for (int i = 0; i < n; ++i) {
    const auto& wb = blocks_[2 * i];
    const auto& bb = blocks_[2 * i + 1];
    Eigen::Map<const Matrix> w(params_.data() + wb.offset, wb.rows, wb.cols);
    Eigen::Map<const Vec<T>> bias(params_.data() + bb.offset, bb.rows);
    const int stride = config_.encoder_stride(i);
    im2col(current, batch, len, 1, k, stride, col);
    // Column-major destination puts positions on the kernel's column axis,
    // whose tiles (4 wide) divide every per-sample length, so each sample
    // is summed the same way whatever it is batched with.
    const ColMat<T> zc = w * col;
    Matrix z = zc;
    z.colwise() += bias;
    relu_inplace(z);
    len = conv_output_length(len, k, stride);
    if (trace) {
      trace->enc_cols.push_back(std::move(col));
      trace->enc_out.push_back(z);
    }
    current = std::move(z);
  }
  Matrix flat = flatten_samples(current, batch, len);
  const auto& lw = block("latent.weight");
  const auto& lb = block("latent.bias");
  Eigen::Map<const Matrix> w(params_.data() + lw.offset, lw.rows, lw.cols);
  Eigen::Map<const Vec<T>> bias(params_.data() + lb.offset, lb.rows);
  // One product per sample, so a sample's latent does not depend on what it
  // was batched with (a single row would otherwise take the GEMV path).
  Matrix latent(batch, lw.rows);
  for (int b = 0; b < batch; ++b) latent.row(b).noalias() = flat.row(b) * w.transpose();
  latent.rowwise() += bias.transpose();
  if (trace) {
    trace->flat = std::move(flat);
    trace->latent = latent;
  }
  return latent;
}

template <typename T>
typename ConvAutoencoder<T>::Matrix ConvAutoencoder<T>::decoder_pass(const Matrix& z,
                                                                     Trace* trace) const {
  if (z.cols() != config_.latent_dim) {
    throw Error(ErrorCode::kShapeMismatch, "decoder input has the wrong latent width");
  }
  const int batch = static_cast<int>(z.rows());
  const int n = config_.layers();
  const int k = config_.kernel_size;
  const auto& f = config_.encoder_features;

  const auto& ew = block("expand.weight");
  const auto& eb = block("expand.bias");
  Eigen::Map<const Matrix> we(params_.data() + ew.offset, ew.rows, ew.cols);
  Eigen::Map<const Vec<T>> be(params_.data() + eb.offset, eb.rows);
  Matrix expanded(batch, we.rows());
  for (int b = 0; b < batch; ++b) expanded.row(b).noalias() = z.row(b) * we.transpose();
  expanded.rowwise() += be.transpose();
  int len = config_.expansion_length();
  Matrix current = unflatten_samples(expanded, f.back(), len);

  const std::size_t first_dec = blocks_.size() - 2 - 2 * static_cast<std::size_t>(n);
  const UpConvPlan plan(k);
  Matrix col;
  for (int j = 0; j < n; ++j) {
    const auto& wb = blocks_[first_dec + 2 * j];
    const auto& bb = blocks_[first_dec + 2 * j + 1];
    Eigen::Map<const Matrix> w(params_.data() + wb.offset, wb.rows, wb.cols);
    Eigen::Map<const Vec<T>> bias(params_.data() + bb.offset, bb.rows);
    const int cin = static_cast<int>(current.rows());
    shifted_cols(current, batch, len, plan, col);
    Matrix out(w.rows(), current.cols() * 2);
    for (int r = 0; r < 2; ++r) {
      const ColMat<T> part = phase_weights<T>(w, cin, plan, r) *
                             col.middleRows((plan.lo[r] - plan.dmin) * cin, plan.phase_span(r) * cin);
      for (Eigen::Index c = 0; c < out.rows(); ++c) {
        T* o = out.data() + c * out.cols() + r;
        for (Eigen::Index q = 0; q < part.cols(); ++q) o[2 * q] = part(c, q);
      }
    }
    out.colwise() += bias;
    relu_inplace(out);
    len *= 2;
    if (trace) {
      trace->dec_cols.push_back(std::move(col));
      trace->dec_out.push_back(out);
    }
    current = std::move(out);
  }
  const auto& ow = block("out.weight");
  const auto& ob = block("out.bias");
  Eigen::Map<const Matrix> wo(params_.data() + ow.offset, ow.rows, ow.cols);
  Eigen::Map<const Vec<T>> bo(params_.data() + ob.offset, ob.rows);
  const ColMat<T> yc = wo * current;
  Matrix y = yc;
  y.colwise() += bo;
  return y;
}

template <typename T>
typename ConvAutoencoder<T>::Matrix ConvAutoencoder<T>::encode_normalized(const Matrix& x,
                                                                          int batch) const {
  return encoder_pass(x, batch, nullptr);
}

template <typename T>
typename ConvAutoencoder<T>::Matrix ConvAutoencoder<T>::decode_normalized(const Matrix& z) const {
  return decoder_pass(z, nullptr);
}

template <typename T>
double ConvAutoencoder<T>::loss_normalized(const Matrix& x, int batch) const {
  if (batch <= 0) throw Error(ErrorCode::kEmptyBatch, "loss of an empty batch");
  const Matrix y = decoder_pass(encoder_pass(x, batch, nullptr), nullptr);
  return (y - x).template cast<double>().squaredNorm() / static_cast<double>(x.size());
}

template <typename T>
double ConvAutoencoder<T>::loss_and_gradient(const Matrix& x, int batch,
                                             AlignedVector<T>& grad) const {
  if (batch <= 0) throw Error(ErrorCode::kEmptyBatch, "gradient of an empty batch");
  Trace trace;
  const Matrix latent = encoder_pass(x, batch, &trace);
  const Matrix y = decoder_pass(latent, &trace);
  const Matrix residual = y - x;
  const double loss = residual.template cast<double>().squaredNorm() / static_cast<double>(x.size());

  grad.assign(params_.size(), T(0));
  auto gmat = [&](const ParamBlock& b) {
    return Eigen::Map<Matrix>(grad.data() + b.offset, b.rows, b.cols);
  };
  auto gvec = [&](const ParamBlock& b) { return Eigen::Map<Vec<T>>(grad.data() + b.offset, b.rows); };
  auto wmat = [&](const ParamBlock& b) {
    return Eigen::Map<const Matrix>(params_.data() + b.offset, b.rows, b.cols);
  };

  const int n = config_.layers();
  const int k = config_.kernel_size;
  const auto& f = config_.encoder_features;

  // Output projection.
  Matrix dy = residual * static_cast<T>(2.0 / static_cast<double>(x.size()));
  const auto& ow = block("out.weight");
  gmat(ow).noalias() += dy * trace.dec_out.back().transpose();
  gvec(block("out.bias")) += dy.rowwise().sum();
  Matrix grad_act = wmat(ow).transpose() * dy;

  // Decoder stages, last to first.
  const std::size_t first_dec = blocks_.size() - 2 - 2 * static_cast<std::size_t>(n);
  const UpConvPlan plan(k);
  for (int j = n - 1; j >= 0; --j) {
    const auto& wb = blocks_[first_dec + 2 * j];
    const auto& bb = blocks_[first_dec + 2 * j + 1];
    const Matrix dz = relu_backward(grad_act, trace.dec_out[j]);
    gvec(bb) += dz.rowwise().sum();
    const int cin = j == 0 ? f.back() : f[n - j];
    const int lin = config_.expansion_length() << j;
    const Matrix& col = trace.dec_cols[j];
    Matrix dcol = Matrix::Zero(col.rows(), col.cols());
    auto gw = gmat(wb);
    Matrix dz_r(dz.rows(), dz.cols() / 2);
    for (int r = 0; r < 2; ++r) {
      for (Eigen::Index c = 0; c < dz.rows(); ++c) {
        const T* s = dz.data() + c * dz.cols() + r;
        T* o = dz_r.data() + c * dz_r.cols();
        for (Eigen::Index q = 0; q < dz_r.cols(); ++q) o[q] = s[2 * q];
      }
      const Eigen::Index row0 = (plan.lo[r] - plan.dmin) * cin;
      const Eigen::Index rows = plan.phase_span(r) * cin;
      const Matrix gw_r = dz_r * col.middleRows(row0, rows).transpose();
      add_phase_gradient(gw_r, cin, plan, r, gw);
      dcol.middleRows(row0, rows).noalias() +=
          phase_weights<T>(wmat(wb), cin, plan, r).transpose() * dz_r;
    }
    shifted_cols_adjoint(dcol, cin, batch, lin, plan, grad_act);
  }

  // Expansion.
  const Matrix d_expanded = flatten_samples(grad_act, batch, config_.expansion_length());
  const auto& ew = block("expand.weight");
  gmat(ew).noalias() += d_expanded.transpose() * trace.latent;
  gvec(block("expand.bias")) += d_expanded.colwise().sum().transpose();
  const Matrix d_latent = d_expanded * wmat(ew);

  // Bottleneck.
  const auto& lw = block("latent.weight");
  gmat(lw).noalias() += d_latent.transpose() * trace.flat;
  gvec(block("latent.bias")) += d_latent.colwise().sum().transpose();
  const Matrix d_flat = d_latent * wmat(lw);
  grad_act = unflatten_samples(d_flat, f.back(), config_.bottleneck_length());

  // Encoder, last to first.
  std::vector<int> lengths{config_.input_points};
  for (int i = 0; i < n; ++i) {
    lengths.push_back(conv_output_length(lengths.back(), k, config_.encoder_stride(i)));
  }
  for (int i = n - 1; i >= 0; --i) {
    const auto& wb = blocks_[2 * i];
    const auto& bb = blocks_[2 * i + 1];
    const Matrix dz = relu_backward(grad_act, trace.enc_out[i]);
    gmat(wb).noalias() += dz * trace.enc_cols[i].transpose();
    gvec(bb) += dz.rowwise().sum();
    if (i == 0) break;
    const Matrix dcol = wmat(wb).transpose() * dz;
    col2im(dcol, f[i - 1], batch, lengths[i], 1, k, config_.encoder_stride(i), grad_act);
  }
  return loss;
}

template class ConvAutoencoder<float>;
template class ConvAutoencoder<double>;

// ---------------------------------------------------------------------------
// Streamline-level API

AutoencoderModel init_model(const ModelConfig& config) { return AutoencoderModel(config); }

template <typename T>
typename ConvAutoencoder<T>::Matrix to_model_input(const ConvAutoencoder<T>& model,
                                                   std::span<const Streamline> batch) {
  const int points = model.config().input_points;
  const int channels = model.config().input_channels;
  if (channels != 3) {
    throw Error(ErrorCode::kShapeMismatch, "streamline input needs a 3-channel model");
  }
  typename ConvAutoencoder<T>::Matrix x(channels, static_cast<Eigen::Index>(batch.size()) * points);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& s = batch[b];
    if (s.size() != static_cast<std::size_t>(points)) {
      throw Error(ErrorCode::kShapeMismatch, "streamline " + std::to_string(b) + " has " +
                                                 std::to_string(s.size()) + " points, model expects " +
                                                 std::to_string(points));
    }
    for (int l = 0; l < points; ++l) {
      const Point3& p = s[static_cast<std::size_t>(l)];
      if (!p.finite()) throw Error(ErrorCode::kInvalidStreamline, "non-finite coordinate");
      const Point3 q = model.normalization.normalize(p);
      const auto col = static_cast<Eigen::Index>(b) * points + l;
      x(0, col) = static_cast<T>(q.x);
      x(1, col) = static_cast<T>(q.y);
      x(2, col) = static_cast<T>(q.z);
    }
  }
  return x;
}

template ConvAutoencoder<float>::Matrix to_model_input(const ConvAutoencoder<float>&,
                                                       std::span<const Streamline>);
template ConvAutoencoder<double>::Matrix to_model_input(const ConvAutoencoder<double>&,
                                                        std::span<const Streamline>);

Tractogram prepare_input(const AutoencoderModel& model, const Tractogram& t) {
  for (const auto& s : t.streamlines) validate(s);
  Tractogram out = resample(t, static_cast<std::size_t>(model.config().input_points));
  if (model.anchor) out = align_endpoints(out, *model.anchor);
  return out;
}

LatentVector encode(const AutoencoderModel& model, const Streamline& s) {
  return encode_batch(model, std::span<const Streamline>(&s, 1)).front();
}

std::vector<LatentVector> encode_batch(const AutoencoderModel& model,
                                       std::span<const Streamline> streamlines, std::size_t chunk,
                                       int threads) {
  chunk = std::max<std::size_t>(chunk, 1);
  std::vector<LatentVector> out(streamlines.size());
  const std::size_t n_chunks = (streamlines.size() + chunk - 1) / chunk;
  auto work = [&](std::size_t first_chunk, std::size_t stride) {
    for (std::size_t c = first_chunk; c < n_chunks; c += stride) {
      const std::size_t begin = c * chunk;
      const std::size_t count = std::min(chunk, streamlines.size() - begin);
      const auto part = streamlines.subspan(begin, count);
      const auto x = to_model_input(model, part);
      const auto z = model.encode_normalized(x, static_cast<int>(count));
      for (std::size_t i = 0; i < count; ++i) {
        out[begin + i].assign(z.row(static_cast<Eigen::Index>(i)).data(),
                              z.row(static_cast<Eigen::Index>(i)).data() + z.cols());
      }
    }
  };
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || n_chunks < 2) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < std::min(workers, n_chunks); ++w) {
      pool.emplace_back(work, w, std::min(workers, n_chunks));
    }
  }
  return out;
}

namespace {

void check_latent(const AutoencoderModel& model, const LatentVector& z) {
  if (z.size() != static_cast<std::size_t>(model.config().latent_dim)) {
    throw Error(ErrorCode::kInvalidLatent, "latent vector has " + std::to_string(z.size()) +
                                               " components, model expects " +
                                               std::to_string(model.config().latent_dim));
  }
  for (float v : z) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kInvalidLatent, "non-finite latent component");
  }
}

}  // namespace

std::vector<Streamline> decode_batch(const AutoencoderModel& model,
                                     std::span<const LatentVector> latents, std::size_t chunk) {
  chunk = std::max<std::size_t>(chunk, 1);
  const int points = model.config().input_points;
  std::vector<Streamline> out;
  out.reserve(latents.size());
  for (std::size_t begin = 0; begin < latents.size(); begin += chunk) {
    const std::size_t count = std::min(chunk, latents.size() - begin);
    AutoencoderModel::Matrix z(static_cast<Eigen::Index>(count), model.config().latent_dim);
    for (std::size_t i = 0; i < count; ++i) {
      check_latent(model, latents[begin + i]);
      for (int d = 0; d < model.config().latent_dim; ++d) {
        z(static_cast<Eigen::Index>(i), d) = latents[begin + i][static_cast<std::size_t>(d)];
      }
    }
    const auto y = model.decode_normalized(z);
    for (std::size_t i = 0; i < count; ++i) {
      Streamline s(static_cast<std::size_t>(points));
      for (int l = 0; l < points; ++l) {
        const auto col = static_cast<Eigen::Index>(i) * points + l;
        s[static_cast<std::size_t>(l)] =
            model.normalization.denormalize({static_cast<double>(y(0, col)),
                                             static_cast<double>(y(1, col)),
                                             static_cast<double>(y(2, col))});
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

Streamline decode(const AutoencoderModel& model, const LatentVector& z) {
  return decode_batch(model, std::span<const LatentVector>(&z, 1)).front();
}

double loss(const AutoencoderModel& model, std::span<const Streamline> batch) {
  if (batch.empty()) throw Error(ErrorCode::kEmptyBatch, "loss of an empty batch");
  return model.loss_normalized(to_model_input(model, batch), static_cast<int>(batch.size()));
}

std::vector<float> gradients(const AutoencoderModel& model, std::span<const Streamline> batch) {
  if (batch.empty()) throw Error(ErrorCode::kEmptyBatch, "gradient of an empty batch");
  AlignedVector<float> grad;
  model.loss_and_gradient(to_model_input(model, batch), static_cast<int>(batch.size()), grad);
  return {grad.begin(), grad.end()};
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw Error(ErrorCode::kInvalidConfig, "learning_rate must be finite and >= 0");
  }
  if (!(weight_decay >= 0.0)) throw Error(ErrorCode::kInvalidConfig, "weight_decay must be >= 0");
  if (batch_size < 1) throw Error(ErrorCode::kInvalidConfig, "batch_size must be positive");
  if (max_epochs < 1) throw Error(ErrorCode::kInvalidConfig, "max_epochs must be positive");
  if (patience < 1) throw Error(ErrorCode::kInvalidConfig, "patience must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "invalid Adam moment parameters");
  }
}

AdamW::AdamW(std::size_t n, const TrainConfig& config)
    : config_(config), m_(n, 0.0f), v_(n, 0.0f) {}

void AdamW::step(std::span<float> params, std::span<const float> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw Error(ErrorCode::kShapeMismatch, "optimizer state does not match parameters");
  }
  ++t_;
  const double t = static_cast<double>(t_);
  const auto b1 = static_cast<float>(config_.beta1);
  const auto b2 = static_cast<float>(config_.beta2);
  const bool decoupled = config_.decoupled_weight_decay;
  const auto decay = static_cast<float>(
      decoupled ? 1.0 - config_.learning_rate * config_.weight_decay : 1.0);
  const auto l2 = static_cast<float>(decoupled ? 0.0 : config_.weight_decay);
  const auto step_size =
      static_cast<float>(config_.learning_rate / (1.0 - std::pow(config_.beta1, t)));
  const auto inv_bc2 = static_cast<float>(1.0 / (1.0 - std::pow(config_.beta2, t)));
  const auto eps = static_cast<float>(config_.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const float g = decoupled ? grad[i] : grad[i] + l2 * params[i];
    m_[i] = b1 * m_[i] + (1.0f - b1) * g;
    v_[i] = b2 * v_[i] + (1.0f - b2) * g * g;
    params[i] = params[i] * decay - step_size * m_[i] / (std::sqrt(v_[i] * inv_bc2) + eps);
  }
}

namespace {

using FMatrix = AutoencoderModel::Matrix;

// Columns of the samples in `order[begin, begin + count)`.
void gather_batch(const FMatrix& data, int points, std::span<const std::size_t> order,
                  FMatrix& out) {
  out.resize(data.rows(), static_cast<Eigen::Index>(order.size()) * points);
  for (Eigen::Index c = 0; c < data.rows(); ++c) {
    for (std::size_t b = 0; b < order.size(); ++b) {
      const float* src = data.data() + c * data.cols() + static_cast<std::ptrdiff_t>(order[b]) * points;
      float* dst = out.data() + c * out.cols() + static_cast<std::ptrdiff_t>(b) * points;
      std::copy(src, src + points, dst);
    }
  }
}

double dataset_loss(const AutoencoderModel& model, const FMatrix& data, std::size_t count,
                    int batch_size) {
  const int points = model.config().input_points;
  double total = 0.0;
  FMatrix batch;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < count; begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(batch_size), count - begin);
    idx.resize(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = begin + i;
    gather_batch(data, points, idx, batch);
    total += model.loss_normalized(batch, static_cast<int>(n)) * static_cast<double>(n);
  }
  return total / static_cast<double>(count);
}

}  // namespace

TrainResult train(AutoencoderModel model, const Tractogram& train_set, const Tractogram& val_set,
                  const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  if (train_set.empty() || val_set.empty()) {
    throw Error(ErrorCode::kEmptyBatch, "training and validation sets must be non-empty");
  }
  if (config.fit_normalization) model.normalization = fit_normalization(train_set);

  const int points = model.config().input_points;
  const FMatrix train_data = to_model_input(model, std::span<const Streamline>(train_set.streamlines));
  const FMatrix val_data = to_model_input(model, std::span<const Streamline>(val_set.streamlines));

  TrainResult result{model, {}};
  TrainReport& report = result.report;
  report.config = config;
  report.train_size = train_set.size();
  report.val_size = val_set.size();
  report.initial_val_loss = dataset_loss(model, val_data, val_set.size(), config.batch_size);
  report.best_val_loss = report.initial_val_loss;

  AdamW optimizer(model.parameter_count(), config);
  Rng rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  AlignedVector<float> grad;
  FMatrix batch;
  int since_best = 0;
  report.stop_reason = "max_epochs";
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    rng.shuffle(std::span<std::size_t>(order));
    double train_total = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t n =
          std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), order.size() - begin);
      gather_batch(train_data, points, std::span<const std::size_t>(order).subspan(begin, n), batch);
      const double batch_loss = model.loss_and_gradient(batch, static_cast<int>(n), grad);
      if (!std::isfinite(batch_loss)) {
        throw TrainingDivergedError(epoch, "training loss became non-finite in epoch " +
                                               std::to_string(epoch));
      }
      optimizer.step(model.parameters(), grad);
      train_total += batch_loss * static_cast<double>(n);
    }
    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = train_total / static_cast<double>(order.size());
    record.val_loss = dataset_loss(model, val_data, val_set.size(), config.batch_size);
    record.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!std::isfinite(record.val_loss)) {
      throw TrainingDivergedError(epoch, "validation loss became non-finite in epoch " +
                                             std::to_string(epoch));
    }
    report.epochs.push_back(record);
    if (on_epoch) on_epoch(record);

    if (record.val_loss < report.best_val_loss || report.best_epoch == 0) {
      report.best_val_loss = record.val_loss;
      report.best_epoch = epoch;
      result.model = model;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      report.stop_reason = "early_stopping";
      break;
    }
  }
  report.steps = optimizer.steps();
  return result;
}

}  // namespace finta
