#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "consis/error.hpp"
#include "consis/tensor.hpp"

namespace consis {

enum class LayerKind { conv3x3, relu, maxpool2, global_avg_pool, flatten, dense };

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv3x3: return "conv3x3";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2: return "maxpool2";
    case LayerKind::global_avg_pool: return "global_avg_pool";
    case LayerKind::flatten: return "flatten";
    case LayerKind::dense: return "dense";
  }
  return "?";
}

inline LayerKind layer_kind_from_name(const std::string& s) {
  if (s == "conv3x3") return LayerKind::conv3x3;
  if (s == "relu") return LayerKind::relu;
  if (s == "maxpool2") return LayerKind::maxpool2;
  if (s == "global_avg_pool") return LayerKind::global_avg_pool;
  if (s == "flatten") return LayerKind::flatten;
  if (s == "dense") return LayerKind::dense;
  raise(ErrorCode::corrupt_checkpoint, "unknown layer kind '" + s + "'");
}

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::string name;
  int in_channels = 0;   // conv3x3
  int out_channels = 0;  // conv3x3
  int in_features = 0;   // dense
  int out_features = 0;  // dense
};

// Channel-major spatial shape; vector features use h = w = 1.
struct Shape3 {
  int c = 0, h = 0, w = 0;
  int numel() const { return c * h * w; }
  bool operator==(const Shape3&) const = default;
};

inline Shape3 layer_output_shape(const LayerSpec& layer, const Shape3& in) {
  switch (layer.kind) {
    case LayerKind::conv3x3:
      require(in.c == layer.in_channels, ErrorCode::shape_mismatch,
              layer.name + ": expected " + std::to_string(layer.in_channels) +
                  " input channels, got " + std::to_string(in.c));
      require(in.h >= 1 && in.w >= 1, ErrorCode::shape_mismatch,
              layer.name + ": empty spatial input");
      return {layer.out_channels, in.h, in.w};
    case LayerKind::relu:
      return in;
    case LayerKind::maxpool2:
      require(in.h % 2 == 0 && in.w % 2 == 0, ErrorCode::shape_mismatch,
              layer.name + ": maxpool2 needs even spatial dims");
      return {in.c, in.h / 2, in.w / 2};
    case LayerKind::global_avg_pool:
      return {in.c, 1, 1};
    case LayerKind::flatten:
      return {in.numel(), 1, 1};
    case LayerKind::dense:
      require(in.h == 1 && in.w == 1 && in.c == layer.in_features,
              ErrorCode::shape_mismatch,
              layer.name + ": dense expects flat input of " +
                  std::to_string(layer.in_features));
      return {layer.out_features, 1, 1};
  }
  raise(ErrorCode::shape_mismatch, "unreachable layer kind");
}

namespace kernels {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRowMat = Eigen::Map<RowMat<T>>;
template <typename T>
using MapConstRowMat = Eigen::Map<const RowMat<T>>;

// col has C*9 rows of length H*W; row (c*9 + ky*3 + kx) holds the input
// shifted by (ky-1, kx-1) with zero padding.
template <typename T>
void im2col_3x3(const T* in, int C, int H, int W, T* col) {
  const int HW = H * W;
  for (int c = 0; c < C; ++c) {
    const T* plane = in + static_cast<std::ptrdiff_t>(c) * HW;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* row = col + static_cast<std::ptrdiff_t>(c * 9 + ky * 3 + kx) * HW;
        for (int y = 0; y < H; ++y) {
          const int sy = y + ky - 1;
          T* dst = row + y * W;
          if (sy < 0 || sy >= H) {
            std::fill(dst, dst + W, T{});
            continue;
          }
          const T* src = plane + sy * W;
          if (kx == 0) {
            dst[0] = T{};
            std::copy(src, src + (W - 1), dst + 1);
          } else if (kx == 1) {
            std::copy(src, src + W, dst);
          } else {
            std::copy(src + 1, src + W, dst);
            dst[W - 1] = T{};
          }
        }
      }
    }
  }
}

// Transpose of im2col_3x3: scatter-add column gradients back to input layout.
template <typename T>
void col2im_3x3(const T* dcol, int C, int H, int W, T* dx) {
  const int HW = H * W;
  std::fill(dx, dx + static_cast<std::ptrdiff_t>(C) * HW, T{});
  for (int c = 0; c < C; ++c) {
    T* plane = dx + static_cast<std::ptrdiff_t>(c) * HW;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* row = dcol + static_cast<std::ptrdiff_t>(c * 9 + ky * 3 + kx) * HW;
        for (int y = 0; y < H; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= H) continue;
          T* dst = plane + sy * W;
          const T* src = row + y * W;
          if (kx == 0) {
            for (int x = 1; x < W; ++x) dst[x - 1] += src[x];
          } else if (kx == 1) {
            for (int x = 0; x < W; ++x) dst[x] += src[x];
          } else {
            for (int x = 0; x < W - 1; ++x) dst[x + 1] += src[x];
          }
        }
      }
    }
  }
}

// out[cout, HW] = W[cout, Cin*9] * col + bias. colbuf must hold Cin*9*H*W.
template <typename T>
void conv3x3_forward(const T* in, int Cin, int H, int W, const T* weight,
                     const T* bias, int Cout, T* out, T* colbuf) {
  const int HW = H * W;
  const int K = Cin * 9;
  im2col_3x3(in, Cin, H, W, colbuf);
  MapConstRowMat<T> wm(weight, Cout, K);
  MapConstRowMat<T> cm(colbuf, K, HW);
  MapRowMat<T> om(out, Cout, HW);
  om.noalias() = wm * cm;
  for (int co = 0; co < Cout; ++co) om.row(co).array() += bias[co];
}

// Accumulates dweight/dbias; writes dx when non-null. colbuf and dcolbuf must
// each hold Cin*9*H*W. Bias accumulation is a fixed-order scalar loop so the
// result does not depend on buffer addresses (Eigen reductions peel by
// pointer alignment, which would break bitwise reproducibility).
template <typename T>
void conv3x3_backward(const T* in, int Cin, int H, int W, const T* weight,
                      int Cout, const T* dout, T* dweight, T* dbias, T* dx,
                      T* colbuf, T* dcolbuf) {
  const int HW = H * W;
  const int K = Cin * 9;
  MapConstRowMat<T> dom(dout, Cout, HW);
  im2col_3x3(in, Cin, H, W, colbuf);
  MapConstRowMat<T> cm(colbuf, K, HW);
  MapRowMat<T> dwm(dweight, Cout, K);
  dwm.noalias() += dom * cm.transpose();
  for (int co = 0; co < Cout; ++co) {
    T acc{};
    const T* row = dout + static_cast<std::ptrdiff_t>(co) * HW;
    for (int i = 0; i < HW; ++i) acc += row[i];
    dbias[co] += acc;
  }
  if (dx != nullptr) {
    MapConstRowMat<T> wm(weight, Cout, K);
    MapRowMat<T> dcm(dcolbuf, K, HW);
    dcm.noalias() = wm.transpose() * dom;
    col2im_3x3(dcolbuf, Cin, H, W, dx);
  }
}

template <typename T>
void relu_forward(const T* in, std::size_t n, T* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = in[i] > T{} ? in[i] : T{};
}

template <typename T>
void relu_backward(const T* out, const T* dout, std::size_t n, T* dx) {
  for (std::size_t i = 0; i < n; ++i) dx[i] = out[i] > T{} ? dout[i] : T{};
}

// 2x2 stride-2 max pool; argmax stores the flat y*W+x offset inside the input
// plane. Ties resolve to the first cell in scan order.
template <typename T>
void maxpool2_forward(const T* in, int C, int H, int W, T* out,
                      std::uint32_t* argmax) {
  const int OH = H / 2, OW = W / 2;
  for (int c = 0; c < C; ++c) {
    const T* plane = in + static_cast<std::ptrdiff_t>(c) * H * W;
    T* oplane = out + static_cast<std::ptrdiff_t>(c) * OH * OW;
    std::uint32_t* aplane = argmax + static_cast<std::ptrdiff_t>(c) * OH * OW;
    for (int oy = 0; oy < OH; ++oy) {
      for (int ox = 0; ox < OW; ++ox) {
        const int y = oy * 2, x = ox * 2;
        int best = y * W + x;
        T bv = plane[best];
        const int candidates[3] = {y * W + x + 1, (y + 1) * W + x, (y + 1) * W + x + 1};
        for (int idx : candidates) {
          if (plane[idx] > bv) {
            bv = plane[idx];
            best = idx;
          }
        }
        oplane[oy * OW + ox] = bv;
        aplane[oy * OW + ox] = static_cast<std::uint32_t>(best);
      }
    }
  }
}

template <typename T>
void maxpool2_backward(const T* dout, const std::uint32_t* argmax, int C, int H,
                       int W, T* dx) {
  const int OH = H / 2, OW = W / 2;
  std::fill(dx, dx + static_cast<std::ptrdiff_t>(C) * H * W, T{});
  for (int c = 0; c < C; ++c) {
    const T* doplane = dout + static_cast<std::ptrdiff_t>(c) * OH * OW;
    const std::uint32_t* aplane = argmax + static_cast<std::ptrdiff_t>(c) * OH * OW;
    T* dplane = dx + static_cast<std::ptrdiff_t>(c) * H * W;
    for (int i = 0; i < OH * OW; ++i) dplane[aplane[i]] += doplane[i];
  }
}

template <typename T>
void global_avg_pool_forward(const T* in, int C, int HW, T* out) {
  for (int c = 0; c < C; ++c) {
    T acc{};
    const T* plane = in + static_cast<std::ptrdiff_t>(c) * HW;
    for (int i = 0; i < HW; ++i) acc += plane[i];
    out[c] = acc / static_cast<T>(HW);
  }
}

template <typename T>
void global_avg_pool_backward(const T* dout, int C, int HW, T* dx) {
  for (int c = 0; c < C; ++c) {
    const T g = dout[c] / static_cast<T>(HW);
    T* plane = dx + static_cast<std::ptrdiff_t>(c) * HW;
    for (int i = 0; i < HW; ++i) plane[i] = g;
  }
}

// Dense layers are small; fixed-order scalar loops keep them bitwise
// reproducible regardless of allocation addresses.
template <typename T>
void dense_forward(const T* x, int in_f, const T* weight, const T* bias,
                   int out_f, T* out) {
  for (int o = 0; o < out_f; ++o) {
    T acc = bias[o];
    const T* row = weight + static_cast<std::ptrdiff_t>(o) * in_f;
    for (int i = 0; i < in_f; ++i) acc += row[i] * x[i];
    out[o] = acc;
  }
}

template <typename T>
void dense_backward(const T* x, const T* weight, int in_f, int out_f,
                    const T* dout, T* dweight, T* dbias, T* dx) {
  for (int o = 0; o < out_f; ++o) {
    T* drow = dweight + static_cast<std::ptrdiff_t>(o) * in_f;
    for (int i = 0; i < in_f; ++i) drow[i] += dout[o] * x[i];
    dbias[o] += dout[o];
  }
  if (dx != nullptr) {
    for (int i = 0; i < in_f; ++i) {
      T acc{};
      for (int o = 0; o < out_f; ++o)
        acc += weight[static_cast<std::ptrdiff_t>(o) * in_f + i] * dout[o];
      dx[i] = acc;
    }
  }
}

}  // namespace kernels
}  // namespace consis
