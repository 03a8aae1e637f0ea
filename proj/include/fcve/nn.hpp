#ifndef FCVE_NN_HPP
#define FCVE_NN_HPP

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace fcve {

template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>; // col-major
template <typename T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using MapMat = Eigen::Map<MatX<T>>;
template <typename T>
using MapConstMat = Eigen::Map<const MatX<T>>;

// ---------------------------------------------------------------------------
// Parameter storage. All of a model's weights live in one flat buffer; layers
// keep offsets and view slices through Eigen maps. Gradients use a buffer of
// identical layout, which makes optimizer steps, serialization, checksums and
// finite-difference probes uniform.
// ---------------------------------------------------------------------------

struct ParamInfo {
    std::string name;
    int64_t offset = 0;
    int64_t count = 0;
    std::vector<int> dims;
};

template <typename T>
struct ParamPack {
    std::vector<T> theta;
    std::vector<ParamInfo> infos;

    int64_t add(const std::string& name, std::vector<int> dims) {
        int64_t count = 1;
        for (int d : dims) count *= d;
        ParamInfo info{name, static_cast<int64_t>(theta.size()), count, std::move(dims)};
        theta.resize(theta.size() + count, T(0));
        int64_t off = info.offset;
        infos.push_back(std::move(info));
        return off;
    }
};

// ---------------------------------------------------------------------------
// Activation layout: a chunk of B same-sized planes is a col-major matrix
// [C x B*H*W] whose column j = b*H*W + y*W + x holds the C channel values of
// one pixel. im2col emits [9*C x B*H*W] with row k = kernel_pos*C + c, so a
// 3x3 convolution is a single GEMM against weights [C_out x 9*C_in].
// ---------------------------------------------------------------------------

template <typename T>
void im2col3x3(const T* act, int c, int b, int h, int w, T* cols) {
    const int hw = h * w;
    for (int bi = 0; bi < b; ++bi) {
        const T* img = act + static_cast<int64_t>(bi) * hw * c;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                T* dst = cols + (static_cast<int64_t>(bi) * hw + y * w + x) * 9 * c;
                for (int ky = 0; ky < 3; ++ky) {
                    const int yy = y + ky - 1;
                    for (int kx = 0; kx < 3; ++kx) {
                        const int xx = x + kx - 1;
                        T* out = dst + (ky * 3 + kx) * c;
                        if (yy < 0 || yy >= h || xx < 0 || xx >= w)
                            std::memset(out, 0, sizeof(T) * c);
                        else
                            std::memcpy(out, img + (yy * w + xx) * c, sizeof(T) * c);
                    }
                }
            }
        }
    }
}

// scatter-add transpose of im2col3x3; dact must be zeroed by the caller
template <typename T>
void col2im3x3_add(const T* cols, int c, int b, int h, int w, T* dact) {
    const int hw = h * w;
    for (int bi = 0; bi < b; ++bi) {
        T* img = dact + static_cast<int64_t>(bi) * hw * c;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const T* src = cols + (static_cast<int64_t>(bi) * hw + y * w + x) * 9 * c;
                for (int ky = 0; ky < 3; ++ky) {
                    const int yy = y + ky - 1;
                    if (yy < 0 || yy >= h) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        const int xx = x + kx - 1;
                        if (xx < 0 || xx >= w) continue;
                        const T* in = src + (ky * 3 + kx) * c;
                        T* out = img + (yy * w + xx) * c;
                        for (int ci = 0; ci < c; ++ci) out[ci] += in[ci];
                    }
                }
            }
        }
    }
}

template <typename T>
void maxpool2x2(const T* in, int c, int b, int h, int w, T* out, uint8_t* memo) {
    const int oh = h / 2, ow = w / 2;
    for (int bi = 0; bi < b; ++bi) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const int64_t q = (static_cast<int64_t>(bi) * oh + oy) * ow + ox;
                const T* cand[4];
                for (int k = 0; k < 4; ++k) {
                    const int yy = 2 * oy + k / 2, xx = 2 * ox + k % 2;
                    cand[k] = in + ((static_cast<int64_t>(bi) * h + yy) * w + xx) * c;
                }
                T* dst = out + q * c;
                uint8_t* mm = memo + q * c;
                for (int ci = 0; ci < c; ++ci) {
                    T best = cand[0][ci];
                    uint8_t arg = 0;
                    for (uint8_t k = 1; k < 4; ++k)
                        if (cand[k][ci] > best) { best = cand[k][ci]; arg = k; }
                    dst[ci] = best;
                    mm[ci] = arg;
                }
            }
        }
    }
}

// din must be zeroed by the caller
template <typename T>
void maxpool2x2_backward(const T* dout, const uint8_t* memo, int c, int b, int h,
                         int w, T* din) {
    const int oh = h / 2, ow = w / 2;
    for (int bi = 0; bi < b; ++bi) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const int64_t q = (static_cast<int64_t>(bi) * oh + oy) * ow + ox;
                const T* src = dout + q * c;
                const uint8_t* mm = memo + q * c;
                for (int ci = 0; ci < c; ++ci) {
                    const int yy = 2 * oy + mm[ci] / 2, xx = 2 * ox + mm[ci] % 2;
                    din[((static_cast<int64_t>(bi) * h + yy) * w + xx) * c + ci] += src[ci];
                }
            }
        }
    }
}

// global average pool: [C x B*HW] -> [C x B]
template <typename T>
void gap_forward(const T* in, int c, int b, int hw, T* g) {
    for (int bi = 0; bi < b; ++bi) {
        MapConstMat<T> block(in + static_cast<int64_t>(bi) * hw * c, c, hw);
        Eigen::Map<VecX<T>>(g + static_cast<int64_t>(bi) * c, c) =
            block.rowwise().sum() / static_cast<T>(hw);
    }
}

template <typename T>
void gap_backward(const T* dg, int c, int b, int hw, T* din) {
    for (int bi = 0; bi < b; ++bi) {
        MapMat<T> block(din + static_cast<int64_t>(bi) * hw * c, c, hw);
        block.colwise() =
            Eigen::Map<const VecX<T>>(dg + static_cast<int64_t>(bi) * c, c) /
            static_cast<T>(hw);
    }
}

template <typename T>
void upsample2x(const T* in, int c, int b, int h, int w, T* out) {
    const int oh = 2 * h, ow = 2 * w;
    for (int bi = 0; bi < b; ++bi) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const T* src = in + ((static_cast<int64_t>(bi) * h + oy / 2) * w + ox / 2) * c;
                T* dst = out + ((static_cast<int64_t>(bi) * oh + oy) * ow + ox) * c;
                std::memcpy(dst, src, sizeof(T) * c);
            }
        }
    }
}

// din is overwritten with the sum over each pixel's four children
template <typename T>
void upsample2x_backward(const T* dout, int c, int b, int h, int w, T* din) {
    const int oh = 2 * h, ow = 2 * w;
    std::memset(din, 0, sizeof(T) * static_cast<size_t>(c) * b * h * w);
    for (int bi = 0; bi < b; ++bi) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const T* src = dout + ((static_cast<int64_t>(bi) * oh + oy) * ow + ox) * c;
                T* dst = din + ((static_cast<int64_t>(bi) * h + oy / 2) * w + ox / 2) * c;
                for (int ci = 0; ci < c; ++ci) dst[ci] += src[ci];
            }
        }
    }
}

template <typename T>
void relu_inplace(T* p, int64_t n) {
    for (int64_t i = 0; i < n; ++i) p[i] = p[i] > T(0) ? p[i] : T(0);
}

// masks gradients by the forward *output* (valid since relu(x)>0 <=> x>0)
template <typename T>
void relu_backward_inplace(const T* out, T* grad, int64_t n) {
    for (int64_t i = 0; i < n; ++i)
        if (!(out[i] > T(0))) grad[i] = T(0);
}

template <typename T>
void sigmoid_inplace(T* p, int64_t n) {
    for (int64_t i = 0; i < n; ++i) p[i] = T(1) / (T(1) + std::exp(-p[i]));
}

// sigmoid kept strictly inside (0,1) so downstream range invariants hold even
// when the pre-activation saturates in float
template <typename T>
void sigmoid_open01_inplace(T* p, int64_t n) {
    const T lo = T(1e-6), hi = T(1) - T(1e-6);
    for (int64_t i = 0; i < n; ++i) {
        T s = T(1) / (T(1) + std::exp(-p[i]));
        p[i] = s < lo ? lo : (s > hi ? hi : s);
    }
}

// logits [K x B] col-major. Returns summed cross-entropy; fills probs and,
// when dlogits is non-null, the unscaled gradient (p - onehot).
template <typename T>
double softmax_ce(const T* logits, const int* labels, int k, int b, T* probs,
                  T* dlogits) {
    double loss = 0.0;
    for (int bi = 0; bi < b; ++bi) {
        const T* l = logits + static_cast<int64_t>(bi) * k;
        T* p = probs + static_cast<int64_t>(bi) * k;
        T m = l[0];
        for (int i = 1; i < k; ++i) m = std::max(m, l[i]);
        double z = 0.0;
        for (int i = 0; i < k; ++i) {
            p[i] = std::exp(l[i] - m);
            z += p[i];
        }
        for (int i = 0; i < k; ++i) p[i] = static_cast<T>(p[i] / z);
        loss += std::log(z) + static_cast<double>(m) - static_cast<double>(l[labels[bi]]);
        if (dlogits) {
            T* d = dlogits + static_cast<int64_t>(bi) * k;
            for (int i = 0; i < k; ++i) d[i] = p[i];
            d[labels[bi]] -= T(1);
        }
    }
    return loss;
}

template <typename T>
void softmax_vec(const T* logits, int k, T* probs) {
    int label = 0;
    softmax_ce(logits, &label, k, 1, probs, static_cast<T*>(nullptr));
}

// ---------------------------------------------------------------------------
// Optimizer and init
// ---------------------------------------------------------------------------

template <typename T>
struct Adam {
    T lr = T(1e-3);
    T beta1 = T(0.9), beta2 = T(0.999), eps = T(1e-8);
    int64_t t = 0;
    std::vector<T> m, v;

    explicit Adam(int64_t param_count, T learning_rate)
        : lr(learning_rate), m(param_count, T(0)), v(param_count, T(0)) {}

    void step(std::vector<T>& theta, const std::vector<T>& grad) {
        ++t;
        const T bc1 = T(1) - std::pow(beta1, static_cast<T>(t));
        const T bc2 = T(1) - std::pow(beta2, static_cast<T>(t));
        for (size_t i = 0; i < theta.size(); ++i) {
            m[i] = beta1 * m[i] + (T(1) - beta1) * grad[i];
            v[i] = beta2 * v[i] + (T(1) - beta2) * grad[i] * grad[i];
            theta[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
        }
    }
};

template <typename T>
void he_normal_init(T* p, int64_t n, int fan_in, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (int64_t i = 0; i < n; ++i) p[i] = static_cast<T>(dist(rng));
}

// ---------------------------------------------------------------------------
// Deterministic data parallelism: work is cut into fixed-size chunks whose
// results are reduced in chunk order, so the outcome is independent of the
// thread count (including the serial case).
// ---------------------------------------------------------------------------

inline void parallel_chunks(int nchunks, int threads,
                            const std::function<void(int chunk, int worker)>& fn) {
    if (threads <= 1 || nchunks <= 1) {
        for (int i = 0; i < nchunks; ++i) fn(i, 0);
        return;
    }
    std::atomic<int> next{0};
    auto worker = [&](int wi) {
        for (int i = next.fetch_add(1); i < nchunks; i = next.fetch_add(1)) fn(i, wi);
    };
    std::vector<std::thread> pool;
    const int nworkers = std::min(threads, nchunks);
    pool.reserve(nworkers - 1);
    for (int i = 1; i < nworkers; ++i) pool.emplace_back(worker, i);
    worker(0);
    for (auto& th : pool) th.join();
}

inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

} // namespace fcve

#endif
