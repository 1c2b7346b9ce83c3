#include "af/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "af/parallel.hpp"

namespace af::ops {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

int conv_extent(int in, int pad, int k, int stride, const char* axis) {
  if (in + 2 * pad < k)
    throw ShapeError(std::string("conv: padded ") + axis + " extent " +
                     std::to_string(in + 2 * pad) + " is smaller than kernel " +
                     std::to_string(k));
  return (in + 2 * pad - k) / stride + 1;
}

// Output range [lo, hi) along one axis such that i = i0 + o*stride stays
// inside [0, extent). Always hi >= lo.
inline void valid_range(int i0, int stride, int extent, int out_extent,
                        int& lo, int& hi) {
  lo = i0 < 0 ? (-i0 + stride - 1) / stride : 0;
  hi = std::min(out_extent, i0 >= extent ? 0 : (extent - 1 - i0) / stride + 1);
  if (hi < lo) hi = lo;
}

// Deterministic vector-width-friendly reductions: fixed 8-lane split with a
// fixed combine tree, so results do not depend on how the compiler unrolls.
template <typename T>
T dot_lanes(const T* x, const T* y, int64_t n) {
  T acc[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int l = 0; l < 8; ++l) acc[l] += x[i + l] * y[i + l];
  T tail = T(0);
  for (; i < n; ++i) tail += x[i] * y[i];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) +
         ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail;
}

template <typename T>
T sum_lanes(const T* x, int64_t n) {
  T acc[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int l = 0; l < 8; ++l) acc[l] += x[i + l];
  T tail = T(0);
  for (; i < n; ++i) tail += x[i];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) +
         ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail;
}

// out[o][m] += sum_k a[o*K+k] * col[k*M+m]; out rows must be pre-initialized.
// Four output rows per pass so each col load feeds four FMAs.
template <typename T>
void gemm_rank1_rows(T* out, const T* a, const T* col, int O, int K, int64_t M) {
  constexpr int64_t MT = 2048;
  for (int64_t m0 = 0; m0 < M; m0 += MT) {
    const int64_t m1 = std::min(M, m0 + MT);
    int o = 0;
    for (; o + 4 <= O; o += 4) {
      T* r0 = out + (static_cast<int64_t>(o) + 0) * M;
      T* r1 = out + (static_cast<int64_t>(o) + 1) * M;
      T* r2 = out + (static_cast<int64_t>(o) + 2) * M;
      T* r3 = out + (static_cast<int64_t>(o) + 3) * M;
      const T* a0 = a + (static_cast<int64_t>(o) + 0) * K;
      const T* a1 = a + (static_cast<int64_t>(o) + 1) * K;
      const T* a2 = a + (static_cast<int64_t>(o) + 2) * K;
      const T* a3 = a + (static_cast<int64_t>(o) + 3) * K;
      for (int k = 0; k < K; ++k) {
        const T* c = col + static_cast<int64_t>(k) * M;
        const T w0 = a0[k], w1 = a1[k], w2 = a2[k], w3 = a3[k];
        for (int64_t m = m0; m < m1; ++m) {
          const T cv = c[m];
          r0[m] += w0 * cv;
          r1[m] += w1 * cv;
          r2[m] += w2 * cv;
          r3[m] += w3 * cv;
        }
      }
    }
    for (; o < O; ++o) {
      T* r = out + static_cast<int64_t>(o) * M;
      const T* ao = a + static_cast<int64_t>(o) * K;
      for (int k = 0; k < K; ++k) {
        const T w = ao[k];
        const T* c = col + static_cast<int64_t>(k) * M;
        for (int64_t m = m0; m < m1; ++m) r[m] += w * c[m];
      }
    }
  }
}

// dcol[k][m] += sum_o a[o*K+k] * g[o*M+m]; transposed weight access.
template <typename T>
void gemm_rank1_rows_t(T* dcol, const T* a, const T* g, int K, int O, int64_t M) {
  constexpr int64_t MT = 2048;
  for (int64_t m0 = 0; m0 < M; m0 += MT) {
    const int64_t m1 = std::min(M, m0 + MT);
    int k = 0;
    for (; k + 4 <= K; k += 4) {
      T* r0 = dcol + (static_cast<int64_t>(k) + 0) * M;
      T* r1 = dcol + (static_cast<int64_t>(k) + 1) * M;
      T* r2 = dcol + (static_cast<int64_t>(k) + 2) * M;
      T* r3 = dcol + (static_cast<int64_t>(k) + 3) * M;
      for (int o = 0; o < O; ++o) {
        const T* c = g + static_cast<int64_t>(o) * M;
        const T* ao = a + static_cast<int64_t>(o) * K + k;
        const T w0 = ao[0], w1 = ao[1], w2 = ao[2], w3 = ao[3];
        for (int64_t m = m0; m < m1; ++m) {
          const T cv = c[m];
          r0[m] += w0 * cv;
          r1[m] += w1 * cv;
          r2[m] += w2 * cv;
          r3[m] += w3 * cv;
        }
      }
    }
    for (; k < K; ++k) {
      T* r = dcol + static_cast<int64_t>(k) * M;
      for (int o = 0; o < O; ++o) {
        const T w = a[static_cast<int64_t>(o) * K + k];
        const T* c = g + static_cast<int64_t>(o) * M;
        for (int64_t m = m0; m < m1; ++m) r[m] += w * c[m];
      }
    }
  }
}

// col[k][m] layout: k = (ic*KH + kh)*KW + kw (matches flattened weights),
// m = oh*OW + ow. Out-of-image taps become zeros.
template <typename T>
void im2col_2d(const T* in, int C, int H, int W, int KH, int KW, int stride,
               int pad, int OH, int OW, T* col) {
  const int64_t M = static_cast<int64_t>(OH) * OW;
  for (int ic = 0; ic < C; ++ic) {
    const T* in_c = in + static_cast<int64_t>(ic) * H * W;
    for (int kh = 0; kh < KH; ++kh) {
      for (int kw = 0; kw < KW; ++kw) {
        T* row = col + (static_cast<int64_t>(ic * KH + kh) * KW + kw) * M;
        const int iw0 = kw - pad;
        int wlo, whi;
        valid_range(iw0, stride, W, OW, wlo, whi);
        for (int oh = 0; oh < OH; ++oh) {
          const int ih = oh * stride - pad + kh;
          T* dst = row + static_cast<int64_t>(oh) * OW;
          if (ih < 0 || ih >= H) {
            std::fill(dst, dst + OW, T(0));
            continue;
          }
          const T* src = in_c + static_cast<int64_t>(ih) * W + iw0;
          std::fill(dst, dst + wlo, T(0));
          if (stride == 1) {
            std::copy(src + wlo, src + whi, dst + wlo);
          } else {
            for (int ow = wlo; ow < whi; ++ow) dst[ow] = src[ow * stride];
          }
          std::fill(dst + whi, dst + OW, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_add_2d(const T* col, int C, int H, int W, int KH, int KW, int stride,
                   int pad, int OH, int OW, T* din) {
  const int64_t M = static_cast<int64_t>(OH) * OW;
  for (int ic = 0; ic < C; ++ic) {
    T* din_c = din + static_cast<int64_t>(ic) * H * W;
    for (int kh = 0; kh < KH; ++kh) {
      for (int kw = 0; kw < KW; ++kw) {
        const T* row = col + (static_cast<int64_t>(ic * KH + kh) * KW + kw) * M;
        const int iw0 = kw - pad;
        int wlo, whi;
        valid_range(iw0, stride, W, OW, wlo, whi);
        for (int oh = 0; oh < OH; ++oh) {
          const int ih = oh * stride - pad + kh;
          if (ih < 0 || ih >= H) continue;
          const T* src = row + static_cast<int64_t>(oh) * OW;
          T* dst = din_c + static_cast<int64_t>(ih) * W + iw0;
          if (stride == 1) {
            for (int ow = wlo; ow < whi; ++ow) dst[ow] += src[ow];
          } else {
            for (int ow = wlo; ow < whi; ++ow) dst[ow * stride] += src[ow];
          }
        }
      }
    }
  }
}

// 3-D variants; k = ((ic*KT + kt)*KH + kh)*KW + kw, m = (od*OH + oh)*OW + ow.
template <typename T>
void im2col_3d(const T* in, int C, int D, int H, int W, int KT, int KH, int KW,
               int stride_t, int stride_s, int pad_t, int pad_s, int OD, int OH,
               int OW, T* col) {
  const int64_t M = static_cast<int64_t>(OD) * OH * OW;
  const int64_t plane = static_cast<int64_t>(OH) * OW;
  for (int ic = 0; ic < C; ++ic) {
    const T* in_c = in + static_cast<int64_t>(ic) * D * H * W;
    for (int kt = 0; kt < KT; ++kt) {
      for (int kh = 0; kh < KH; ++kh) {
        for (int kw = 0; kw < KW; ++kw) {
          T* row = col + (static_cast<int64_t>((ic * KT + kt) * KH + kh) * KW + kw) * M;
          const int iw0 = kw - pad_s;
          int wlo, whi;
          valid_range(iw0, stride_s, W, OW, wlo, whi);
          for (int od = 0; od < OD; ++od) {
            const int id = od * stride_t - pad_t + kt;
            T* dst_plane = row + static_cast<int64_t>(od) * plane;
            if (id < 0 || id >= D) {
              std::fill(dst_plane, dst_plane + plane, T(0));
              continue;
            }
            const T* in_d = in_c + static_cast<int64_t>(id) * H * W;
            for (int oh = 0; oh < OH; ++oh) {
              const int ih = oh * stride_s - pad_s + kh;
              T* dst = dst_plane + static_cast<int64_t>(oh) * OW;
              if (ih < 0 || ih >= H) {
                std::fill(dst, dst + OW, T(0));
                continue;
              }
              const T* src = in_d + static_cast<int64_t>(ih) * W + iw0;
              std::fill(dst, dst + wlo, T(0));
              if (stride_s == 1) {
                std::copy(src + wlo, src + whi, dst + wlo);
              } else {
                for (int ow = wlo; ow < whi; ++ow) dst[ow] = src[ow * stride_s];
              }
              std::fill(dst + whi, dst + OW, T(0));
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add_3d(const T* col, int C, int D, int H, int W, int KT, int KH,
                   int KW, int stride_t, int stride_s, int pad_t, int pad_s,
                   int OD, int OH, int OW, T* din) {
  const int64_t M = static_cast<int64_t>(OD) * OH * OW;
  const int64_t plane = static_cast<int64_t>(OH) * OW;
  for (int ic = 0; ic < C; ++ic) {
    T* din_c = din + static_cast<int64_t>(ic) * D * H * W;
    for (int kt = 0; kt < KT; ++kt) {
      for (int kh = 0; kh < KH; ++kh) {
        for (int kw = 0; kw < KW; ++kw) {
          const T* row = col + (static_cast<int64_t>((ic * KT + kt) * KH + kh) * KW + kw) * M;
          const int iw0 = kw - pad_s;
          int wlo, whi;
          valid_range(iw0, stride_s, W, OW, wlo, whi);
          for (int od = 0; od < OD; ++od) {
            const int id = od * stride_t - pad_t + kt;
            if (id < 0 || id >= D) continue;
            T* din_d = din_c + static_cast<int64_t>(id) * H * W;
            for (int oh = 0; oh < OH; ++oh) {
              const int ih = oh * stride_s - pad_s + kh;
              if (ih < 0 || ih >= H) continue;
              const T* src = row + static_cast<int64_t>(od) * plane + static_cast<int64_t>(oh) * OW;
              T* dst = din_d + static_cast<int64_t>(ih) * W + iw0;
              if (stride_s == 1) {
                for (int ow = wlo; ow < whi; ++ow) dst[ow] += src[ow];
              } else {
                for (int ow = wlo; ow < whi; ++ow) dst[ow * stride_s] += src[ow];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
TensorPtr<T> conv2d(Tape<T>& tape, const TensorPtr<T>& input,
                    const TensorPtr<T>& weight, const TensorPtr<T>& bias,
                    int stride, int padding) {
  require(input->rank() == 4, "conv2d: input must be N x C x H x W, got rank " +
                                  std::to_string(input->rank()));
  require(weight->rank() == 4, "conv2d: weight must be O x I x K x K, got rank " +
                                   std::to_string(weight->rank()));
  require(stride >= 1, "conv2d: stride must be positive");
  require(padding >= 0, "conv2d: padding must be non-negative");
  const int N = input->dim(0), C = input->dim(1), H = input->dim(2), W = input->dim(3);
  const int O = weight->dim(0), I = weight->dim(1), KH = weight->dim(2), KW = weight->dim(3);
  require(C == I, "conv2d: input channels (C=" + std::to_string(C) +
                      ") do not match weight input channels (I=" + std::to_string(I) + ")");
  require(bias->rank() == 1 && bias->dim(0) == O,
          "conv2d: bias length " + std::to_string(bias->numel()) +
              " does not match output channels O=" + std::to_string(O));
  const int OH = conv_extent(H, padding, KH, stride, "height");
  const int OW = conv_extent(W, padding, KW, stride, "width");
  const int K = C * KH * KW;
  const int64_t M = static_cast<int64_t>(OH) * OW;

  auto out = make_tensor<T>({N, O, OH, OW});
  {
    const T* in = input->data.data();
    const T* wt = weight->data.data();
    const T* bs = bias->data.data();
    T* op = out->data.data();
    parallel_for(N, [&](int64_t n0, int64_t n1) {
      std::vector<T> col(static_cast<size_t>(K) * static_cast<size_t>(M));
      for (int64_t n = n0; n < n1; ++n) {
        im2col_2d(in + n * C * H * W, C, H, W, KH, KW, stride, padding, OH, OW,
                  col.data());
        T* out_n = op + n * O * M;
        for (int o = 0; o < O; ++o)
          std::fill(out_n + o * M, out_n + (o + 1) * M, bs[o]);
        gemm_rank1_rows(out_n, wt, col.data(), O, K, M);
      }
    });
  }

  if (tape.recording() &&
      (input->requires_grad || weight->requires_grad || bias->requires_grad)) {
    out->requires_grad = true;
    tape.record([input, weight, bias, out, stride, padding, N, C, H, W, O, KH,
                 KW, OH, OW, K, M] {
      if (!out->has_grad()) return;
      const T* go = out->grad.data();
      if (input->requires_grad) {
        input->ensure_grad();
        T* gi = input->grad.data();
        const T* wt = weight->data.data();
        parallel_for(N, [&](int64_t n0, int64_t n1) {
          std::vector<T> dcol(static_cast<size_t>(K) * static_cast<size_t>(M));
          for (int64_t n = n0; n < n1; ++n) {
            std::fill(dcol.begin(), dcol.end(), T(0));
            gemm_rank1_rows_t(dcol.data(), wt, go + n * O * M, K, O, M);
            col2im_add_2d(dcol.data(), C, H, W, KH, KW, stride, padding, OH, OW,
                          gi + n * C * H * W);
          }
        });
      }
      if (weight->requires_grad || bias->requires_grad) {
        weight->ensure_grad();
        bias->ensure_grad();
        T* gw = weight->grad.data();
        T* gb = bias->grad.data();
        const T* in = input->data.data();
        std::vector<T> col(static_cast<size_t>(K) * static_cast<size_t>(M));
        for (int n = 0; n < N; ++n) {
          im2col_2d(in + static_cast<int64_t>(n) * C * H * W, C, H, W, KH, KW,
                    stride, padding, OH, OW, col.data());
          const T* go_n = go + static_cast<int64_t>(n) * O * M;
          const T* colp = col.data();
          parallel_for(O, [&](int64_t o0, int64_t o1) {
            for (int64_t o = o0; o < o1; ++o) {
              const T* g_row = go_n + o * M;
              gb[o] += sum_lanes(g_row, M);
              T* gw_row = gw + o * K;
              for (int k = 0; k < K; ++k)
                gw_row[k] += dot_lanes(g_row, colp + static_cast<int64_t>(k) * M, M);
            }
          });
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> conv3d(Tape<T>& tape, const TensorPtr<T>& input,
                    const TensorPtr<T>& weight, const TensorPtr<T>& bias,
                    int stride_t, int stride_s, int pad_t, int pad_s) {
  require(input->rank() == 5, "conv3d: input must be N x C x T x H x W, got rank " +
                                  std::to_string(input->rank()));
  require(weight->rank() == 5, "conv3d: weight must be O x I x Kt x K x K, got rank " +
                                   std::to_string(weight->rank()));
  require(stride_t >= 1 && stride_s >= 1, "conv3d: strides must be positive");
  require(pad_t >= 0 && pad_s >= 0, "conv3d: padding must be non-negative");
  const int N = input->dim(0), C = input->dim(1), D = input->dim(2),
            H = input->dim(3), W = input->dim(4);
  const int O = weight->dim(0), I = weight->dim(1), KT = weight->dim(2),
            KH = weight->dim(3), KW = weight->dim(4);
  require(C == I, "conv3d: input channels (C=" + std::to_string(C) +
                      ") do not match weight input channels (I=" + std::to_string(I) + ")");
  require(bias->rank() == 1 && bias->dim(0) == O,
          "conv3d: bias length " + std::to_string(bias->numel()) +
              " does not match output channels O=" + std::to_string(O));
  const int OD = conv_extent(D, pad_t, KT, stride_t, "frames");
  const int OH = conv_extent(H, pad_s, KH, stride_s, "height");
  const int OW = conv_extent(W, pad_s, KW, stride_s, "width");
  const int K = C * KT * KH * KW;
  const int64_t M = static_cast<int64_t>(OD) * OH * OW;
  const int64_t in_sample = static_cast<int64_t>(C) * D * H * W;

  auto out = make_tensor<T>({N, O, OD, OH, OW});
  {
    const T* in = input->data.data();
    const T* wt = weight->data.data();
    const T* bs = bias->data.data();
    T* op = out->data.data();
    parallel_for(N, [&](int64_t n0, int64_t n1) {
      std::vector<T> col(static_cast<size_t>(K) * static_cast<size_t>(M));
      for (int64_t n = n0; n < n1; ++n) {
        im2col_3d(in + n * in_sample, C, D, H, W, KT, KH, KW, stride_t, stride_s,
                  pad_t, pad_s, OD, OH, OW, col.data());
        T* out_n = op + n * O * M;
        for (int o = 0; o < O; ++o)
          std::fill(out_n + o * M, out_n + (o + 1) * M, bs[o]);
        gemm_rank1_rows(out_n, wt, col.data(), O, K, M);
      }
    });
  }

  if (tape.recording() &&
      (input->requires_grad || weight->requires_grad || bias->requires_grad)) {
    out->requires_grad = true;
    tape.record([input, weight, bias, out, stride_t, stride_s, pad_t, pad_s, N,
                 C, D, H, W, O, KT, KH, KW, OD, OH, OW, K, M, in_sample] {
      if (!out->has_grad()) return;
      const T* go = out->grad.data();
      if (input->requires_grad) {
        input->ensure_grad();
        T* gi = input->grad.data();
        const T* wt = weight->data.data();
        parallel_for(N, [&](int64_t n0, int64_t n1) {
          std::vector<T> dcol(static_cast<size_t>(K) * static_cast<size_t>(M));
          for (int64_t n = n0; n < n1; ++n) {
            std::fill(dcol.begin(), dcol.end(), T(0));
            gemm_rank1_rows_t(dcol.data(), wt, go + n * O * M, K, O, M);
            col2im_add_3d(dcol.data(), C, D, H, W, KT, KH, KW, stride_t,
                          stride_s, pad_t, pad_s, OD, OH, OW, gi + n * in_sample);
          }
        });
      }
      if (weight->requires_grad || bias->requires_grad) {
        weight->ensure_grad();
        bias->ensure_grad();
        T* gw = weight->grad.data();
        T* gb = bias->grad.data();
        const T* in = input->data.data();
        std::vector<T> col(static_cast<size_t>(K) * static_cast<size_t>(M));
        for (int n = 0; n < N; ++n) {
          im2col_3d(in + static_cast<int64_t>(n) * in_sample, C, D, H, W, KT, KH,
                    KW, stride_t, stride_s, pad_t, pad_s, OD, OH, OW, col.data());
          const T* go_n = go + static_cast<int64_t>(n) * O * M;
          const T* colp = col.data();
          parallel_for(O, [&](int64_t o0, int64_t o1) {
            for (int64_t o = o0; o < o1; ++o) {
              const T* g_row = go_n + o * M;
              gb[o] += sum_lanes(g_row, M);
              T* gw_row = gw + o * K;
              for (int k = 0; k < K; ++k)
                gw_row[k] += dot_lanes(g_row, colp + static_cast<int64_t>(k) * M, M);
            }
          });
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> conv3d(Tape<T>& tape, const TensorPtr<T>& input,
                    const TensorPtr<T>& weight, const TensorPtr<T>& bias,
                    int stride, int padding) {
  return conv3d(tape, input, weight, bias, stride, stride, padding, padding);
}

template <typename T>
TensorPtr<T> relu(Tape<T>& tape, const TensorPtr<T>& x) {
  auto out = make_tensor<T>(x->shape);
  const int64_t n = x->numel();
  for (int64_t i = 0; i < n; ++i) out->data[i] = x->data[i] > T(0) ? x->data[i] : T(0);
  if (tape.recording() && x->requires_grad) {
    out->requires_grad = true;
    tape.record([x, out, n] {
      if (!out->has_grad()) return;
      x->ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        if (x->data[i] > T(0)) x->grad[i] += out->grad[i];
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> max_pool2d(Tape<T>& tape, const TensorPtr<T>& x, int k) {
  require(x->rank() == 4, "max_pool2d: input must be N x C x H x W");
  require(k >= 1, "max_pool2d: window must be positive");
  const int N = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
  require(H >= k && W >= k, "max_pool2d: window " + std::to_string(k) +
                                " larger than input " + std::to_string(H) + "x" +
                                std::to_string(W));
  const int OH = H / k, OW = W / k;
  auto out = make_tensor<T>({N, C, OH, OW});
  auto argmax = std::make_shared<std::vector<int64_t>>(out->data.size());
  const T* in = x->data.data();
  for (int nc = 0; nc < N * C; ++nc) {
    const T* plane = in + static_cast<int64_t>(nc) * H * W;
    for (int oh = 0; oh < OH; ++oh) {
      for (int ow = 0; ow < OW; ++ow) {
        int64_t best = static_cast<int64_t>(oh) * k * W + static_cast<int64_t>(ow) * k;
        T best_v = plane[best];
        for (int dy = 0; dy < k; ++dy) {
          for (int dx = 0; dx < k; ++dx) {
            int64_t pos = (static_cast<int64_t>(oh) * k + dy) * W + ow * k + dx;
            if (plane[pos] > best_v) {
              best_v = plane[pos];
              best = pos;
            }
          }
        }
        int64_t oidx = (static_cast<int64_t>(nc) * OH + oh) * OW + ow;
        out->data[static_cast<size_t>(oidx)] = best_v;
        (*argmax)[static_cast<size_t>(oidx)] = static_cast<int64_t>(nc) * H * W + best;
      }
    }
  }
  if (tape.recording() && x->requires_grad) {
    out->requires_grad = true;
    tape.record([x, out, argmax] {
      if (!out->has_grad()) return;
      x->ensure_grad();
      for (size_t i = 0; i < out->grad.size(); ++i)
        x->grad[static_cast<size_t>((*argmax)[i])] += out->grad[i];
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> global_avg_pool(Tape<T>& tape, const TensorPtr<T>& x) {
  require(x->rank() == 4 || x->rank() == 5,
          "global_avg_pool: input must be N x C x H x W or N x C x T x H x W");
  const int N = x->dim(0), C = x->dim(1);
  int64_t area = 1;
  for (int i = 2; i < x->rank(); ++i) area *= x->dim(i);
  auto out = make_tensor<T>({N, C});
  const T* in = x->data.data();
  for (int nc = 0; nc < N * C; ++nc) {
    out->data[static_cast<size_t>(nc)] =
        sum_lanes(in + nc * area, area) / static_cast<T>(area);
  }
  if (tape.recording() && x->requires_grad) {
    out->requires_grad = true;
    tape.record([x, out, N, C, area] {
      if (!out->has_grad()) return;
      x->ensure_grad();
      for (int nc = 0; nc < N * C; ++nc) {
        const T g = out->grad[static_cast<size_t>(nc)] / static_cast<T>(area);
        T* plane = x->grad.data() + nc * area;
        for (int64_t i = 0; i < area; ++i) plane[i] += g;
      }
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> linear(Tape<T>& tape, const TensorPtr<T>& x,
                    const TensorPtr<T>& weight, const TensorPtr<T>& bias) {
  require(x->rank() == 2, "linear: input must be N x F");
  require(weight->rank() == 2, "linear: weight must be C x F");
  const int N = x->dim(0), F = x->dim(1);
  const int C = weight->dim(0);
  require(weight->dim(1) == F, "linear: weight feature dim " +
                                   std::to_string(weight->dim(1)) +
                                   " does not match input features F=" + std::to_string(F));
  require(bias->rank() == 1 && bias->dim(0) == C,
          "linear: bias length does not match output units C=" + std::to_string(C));
  auto out = make_tensor<T>({N, C});
  for (int n = 0; n < N; ++n) {
    const T* xn = x->data.data() + static_cast<int64_t>(n) * F;
    for (int c = 0; c < C; ++c) {
      const T* wc = weight->data.data() + static_cast<int64_t>(c) * F;
      out->data[static_cast<size_t>(n) * C + c] =
          bias->data[static_cast<size_t>(c)] + dot_lanes(xn, wc, F);
    }
  }
  if (tape.recording() && (x->requires_grad || weight->requires_grad || bias->requires_grad)) {
    out->requires_grad = true;
    tape.record([x, weight, bias, out, N, F, C] {
      if (!out->has_grad()) return;
      const T* go = out->grad.data();
      if (x->requires_grad) {
        x->ensure_grad();
        for (int n = 0; n < N; ++n) {
          T* gx = x->grad.data() + static_cast<int64_t>(n) * F;
          for (int c = 0; c < C; ++c) {
            const T g = go[static_cast<int64_t>(n) * C + c];
            const T* wc = weight->data.data() + static_cast<int64_t>(c) * F;
            for (int f = 0; f < F; ++f) gx[f] += g * wc[f];
          }
        }
      }
      if (weight->requires_grad) {
        weight->ensure_grad();
        for (int c = 0; c < C; ++c) {
          T* gw = weight->grad.data() + static_cast<int64_t>(c) * F;
          for (int n = 0; n < N; ++n) {
            const T g = go[static_cast<int64_t>(n) * C + c];
            const T* xn = x->data.data() + static_cast<int64_t>(n) * F;
            for (int f = 0; f < F; ++f) gw[f] += g * xn[f];
          }
        }
      }
      if (bias->requires_grad) {
        bias->ensure_grad();
        for (int c = 0; c < C; ++c) {
          T acc = T(0);
          for (int n = 0; n < N; ++n) acc += go[static_cast<int64_t>(n) * C + c];
          bias->grad[static_cast<size_t>(c)] += acc;
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> sigmoid(Tape<T>& tape, const TensorPtr<T>& x) {
  auto out = make_tensor<T>(x->shape);
  const int64_t n = x->numel();
  for (int64_t i = 0; i < n; ++i) {
    const T v = x->data[i];
    if (v >= T(0)) {
      out->data[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out->data[i] = e / (T(1) + e);
    }
  }
  if (tape.recording() && x->requires_grad) {
    out->requires_grad = true;
    tape.record([x, out, n] {
      if (!out->has_grad()) return;
      x->ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        const T s = out->data[i];
        x->grad[i] += out->grad[i] * s * (T(1) - s);
      }
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> softmax_cross_entropy(Tape<T>& tape, const TensorPtr<T>& logits,
                                   const std::vector<int>& labels) {
  require(logits->rank() == 2, "softmax_cross_entropy: logits must be N x C");
  const int N = logits->dim(0), C = logits->dim(1);
  require(static_cast<int>(labels.size()) == N,
          "softmax_cross_entropy: " + std::to_string(labels.size()) +
              " labels for batch of " + std::to_string(N));
  for (int lbl : labels)
    if (lbl < 0 || lbl >= C)
      throw Error("softmax_cross_entropy: label " + std::to_string(lbl) +
                  " out of range [0, " + std::to_string(C) + ")");

  auto probs = std::make_shared<std::vector<T>>(logits->data.size());
  T loss = T(0);
  for (int n = 0; n < N; ++n) {
    const T* z = logits->data.data() + static_cast<int64_t>(n) * C;
    T* p = probs->data() + static_cast<int64_t>(n) * C;
    T m = z[0];
    for (int c = 1; c < C; ++c) m = std::max(m, z[c]);
    T denom = T(0);
    for (int c = 0; c < C; ++c) {
      p[c] = std::exp(z[c] - m);
      denom += p[c];
    }
    for (int c = 0; c < C; ++c) p[c] /= denom;
    const T lse = m + std::log(denom);
    loss += lse - z[labels[static_cast<size_t>(n)]];
  }
  auto out = make_tensor<T>({1}, std::vector<T>{loss / static_cast<T>(N)});
  if (tape.recording() && logits->requires_grad) {
    out->requires_grad = true;
    auto labels_copy = std::make_shared<std::vector<int>>(labels);
    tape.record([logits, out, probs, labels_copy, N, C] {
      if (!out->has_grad()) return;
      logits->ensure_grad();
      const T g = out->grad[0] / static_cast<T>(N);
      for (int n = 0; n < N; ++n) {
        const T* p = probs->data() + static_cast<int64_t>(n) * C;
        T* gz = logits->grad.data() + static_cast<int64_t>(n) * C;
        const int y = (*labels_copy)[static_cast<size_t>(n)];
        for (int c = 0; c < C; ++c) gz[c] += g * (p[c] - (c == y ? T(1) : T(0)));
      }
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> sum(Tape<T>& tape, const TensorPtr<T>& x) {
  auto out = make_tensor<T>({1}, std::vector<T>{sum_lanes(x->data.data(), x->numel())});
  if (tape.recording() && x->requires_grad) {
    out->requires_grad = true;
    tape.record([x, out] {
      if (!out->has_grad()) return;
      x->ensure_grad();
      const T g = out->grad[0];
      for (auto& gv : x->grad) gv += g;
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> scale(Tape<T>& tape, const TensorPtr<T>& x, T factor) {
  auto out = make_tensor<T>(x->shape);
  const int64_t n = x->numel();
  for (int64_t i = 0; i < n; ++i) out->data[i] = factor * x->data[i];
  if (tape.recording() && x->requires_grad) {
    out->requires_grad = true;
    tape.record([x, out, factor, n] {
      if (!out->has_grad()) return;
      x->ensure_grad();
      for (int64_t i = 0; i < n; ++i) x->grad[i] += factor * out->grad[i];
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> select(Tape<T>& tape, const TensorPtr<T>& x, int64_t flat_index) {
  if (flat_index < 0 || flat_index >= x->numel())
    throw ShapeError("select: index " + std::to_string(flat_index) +
                     " out of range [0, " + std::to_string(x->numel()) + ")");
  auto out = make_tensor<T>({1}, std::vector<T>{x->data[static_cast<size_t>(flat_index)]});
  if (tape.recording() && x->requires_grad) {
    out->requires_grad = true;
    tape.record([x, out, flat_index] {
      if (!out->has_grad()) return;
      x->ensure_grad();
      x->grad[static_cast<size_t>(flat_index)] += out->grad[0];
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax_rows: input must be N x C");
  const int N = logits.dim(0), C = logits.dim(1);
  Tensor<T> out(logits.shape);
  for (int n = 0; n < N; ++n) {
    const T* z = logits.data.data() + static_cast<int64_t>(n) * C;
    T* p = out.data.data() + static_cast<int64_t>(n) * C;
    T m = z[0];
    for (int c = 1; c < C; ++c) m = std::max(m, z[c]);
    T denom = T(0);
    for (int c = 0; c < C; ++c) {
      p[c] = std::exp(z[c] - m);
      denom += p[c];
    }
    for (int c = 0; c < C; ++c) p[c] /= denom;
  }
  return out;
}

#define AF_INSTANTIATE_OPS(T)                                                          \
  template TensorPtr<T> conv2d<T>(Tape<T>&, const TensorPtr<T>&, const TensorPtr<T>&, \
                                  const TensorPtr<T>&, int, int);                      \
  template TensorPtr<T> conv3d<T>(Tape<T>&, const TensorPtr<T>&, const TensorPtr<T>&, \
                                  const TensorPtr<T>&, int, int, int, int);            \
  template TensorPtr<T> conv3d<T>(Tape<T>&, const TensorPtr<T>&, const TensorPtr<T>&, \
                                  const TensorPtr<T>&, int, int);                      \
  template TensorPtr<T> relu<T>(Tape<T>&, const TensorPtr<T>&);                        \
  template TensorPtr<T> max_pool2d<T>(Tape<T>&, const TensorPtr<T>&, int);             \
  template TensorPtr<T> global_avg_pool<T>(Tape<T>&, const TensorPtr<T>&);             \
  template TensorPtr<T> linear<T>(Tape<T>&, const TensorPtr<T>&, const TensorPtr<T>&,  \
                                  const TensorPtr<T>&);                                \
  template TensorPtr<T> sigmoid<T>(Tape<T>&, const TensorPtr<T>&);                     \
  template TensorPtr<T> softmax_cross_entropy<T>(Tape<T>&, const TensorPtr<T>&,        \
                                                 const std::vector<int>&);             \
  template TensorPtr<T> sum<T>(Tape<T>&, const TensorPtr<T>&);                         \
  template TensorPtr<T> scale<T>(Tape<T>&, const TensorPtr<T>&, T);                    \
  template TensorPtr<T> select<T>(Tape<T>&, const TensorPtr<T>&, int64_t);             \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&);

AF_INSTANTIATE_OPS(float)
AF_INSTANTIATE_OPS(double)

#undef AF_INSTANTIATE_OPS

}  // namespace af::ops
