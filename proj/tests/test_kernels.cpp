#include <cmath>
#include <vector>

#include "doctest.h"
#include "vitssp/kernels.hpp"
#include "vitssp/rng.hpp"

using vitssp::Rng;
namespace kern = vitssp::kernels;

namespace {

std::vector<double> randu(int64_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = rng.uniform(-2.0, 2.0);
    return v;
}

// Independent triple-loop reference used only by this test.
void matmul_naive(const std::vector<double>& a, const std::vector<double>& b,
                  std::vector<double>& c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (int64_t t = 0; t < k; ++t)
                s += a[static_cast<size_t>(i * k + t)] * b[static_cast<size_t>(t * n + j)];
            c[static_cast<size_t>(i * n + j)] = s;
        }
}

}  // namespace

TEST_CASE("matmul matches a naive reference") {
    const int64_t m = 9, k = 13, n = 7;
    const auto a = randu(m * k, 1), b = randu(k * n, 2);
    std::vector<double> got(static_cast<size_t>(m * n)), want(got.size());
    kern::serial::matmul(a.data(), b.data(), got.data(), m, k, n);
    matmul_naive(a, b, want, m, k, n);
    for (size_t i = 0; i < got.size(); ++i)
        CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-13));
}

TEST_CASE("matmul_nt and matmul_tn agree with explicit transposes") {
    const int64_t m = 6, k = 5, n = 8;
    const auto a = randu(m * k, 3);
    const auto bt = randu(n * k, 4);  // b stored [n, k]
    std::vector<double> b(static_cast<size_t>(k * n));
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < k; ++j)
            b[static_cast<size_t>(j * n + i)] = bt[static_cast<size_t>(i * k + j)];
    std::vector<double> got(static_cast<size_t>(m * n)), want(got.size());
    kern::serial::matmul_nt(a.data(), bt.data(), got.data(), m, k, n);
    matmul_naive(a, b, want, m, k, n);
    for (size_t i = 0; i < got.size(); ++i)
        CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-13));

    const auto at = randu(k * m, 5);  // a stored [k, m]
    std::vector<double> a2(static_cast<size_t>(m * k));
    for (int64_t i = 0; i < k; ++i)
        for (int64_t j = 0; j < m; ++j)
            a2[static_cast<size_t>(j * k + i)] = at[static_cast<size_t>(i * m + j)];
    const auto b2 = randu(k * n, 6);
    std::vector<double> got2(static_cast<size_t>(m * n)), want2(got2.size());
    kern::serial::matmul_tn(at.data(), b2.data(), got2.data(), m, k, n);
    matmul_naive(a2, b2, want2, m, k, n);
    for (size_t i = 0; i < got2.size(); ++i)
        CHECK(got2[i] == doctest::Approx(want2[i]).epsilon(1e-13));
}

TEST_CASE("softmax rows are positive, normalized, and max-stable") {
    const int64_t rows = 4, d = 9;
    auto x = randu(rows * d, 7);
    x[3] = 700.0;  // would overflow exp without max subtraction
    std::vector<double> y(static_cast<size_t>(rows * d));
    kern::serial::softmax_rows(x.data(), y.data(), rows, d);
    for (int64_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            const double v = y[static_cast<size_t>(r * d + j)];
            CHECK(v > 0.0);
            CHECK(std::isfinite(v));
            s += v;
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("layer_norm rows have zero mean and unit variance before affine") {
    const int64_t rows = 5, d = 16;
    const auto x = randu(rows * d, 8);
    std::vector<double> gain(static_cast<size_t>(d), 1.0), bias(static_cast<size_t>(d), 0.0);
    std::vector<double> y(static_cast<size_t>(rows * d)), xhat(y.size()),
        inv_std(static_cast<size_t>(rows));
    kern::serial::layer_norm_rows(x.data(), gain.data(), bias.data(), y.data(),
                                  xhat.data(), inv_std.data(), rows, d, 1e-12);
    for (int64_t r = 0; r < rows; ++r) {
        double mean = 0.0, var = 0.0;
        for (int64_t j = 0; j < d; ++j) mean += y[static_cast<size_t>(r * d + j)];
        mean /= d;
        for (int64_t j = 0; j < d; ++j) {
            const double c = y[static_cast<size_t>(r * d + j)] - mean;
            var += c * c;
        }
        var /= d;
        CHECK(std::abs(mean) < 1e-12);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("l2norm rows land on the unit sphere") {
    const int64_t rows = 3, d = 11;
    const auto x = randu(rows * d, 9);
    std::vector<double> y(static_cast<size_t>(rows * d)), inv(static_cast<size_t>(rows));
    kern::serial::l2norm_rows(x.data(), y.data(), inv.data(), rows, d, 1e-12);
    for (int64_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            const double v = y[static_cast<size_t>(r * d + j)];
            s += v * v;
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-10));
    }
}

TEST_CASE("gelu hits its fixed points") {
    const double xs[] = {0.0, 10.0, -10.0};
    double ys[3];
    kern::serial::gelu(xs, ys, 3);
    CHECK(ys[0] == 0.0);
    CHECK(ys[1] == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(std::abs(ys[2]) < 1e-12);
}

TEST_CASE("patchify lays out raster patches with channel-major pixels") {
    // 1 image, 2 channels, 4x4, patch 2 -> 4 patches of length 8.
    const int64_t c = 2, h = 4, w = 4, p = 2;
    std::vector<double> img(static_cast<size_t>(c * h * w));
    for (size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i);
    std::vector<double> out(static_cast<size_t>((h / p) * (w / p) * c * p * p));
    kern::serial::patchify(img.data(), out.data(), 1, c, h, w, p);
    // Patch (0,0): channel 0 pixels {0,1,4,5}, channel 1 pixels {16,17,20,21}.
    const double expect0[] = {0, 1, 4, 5, 16, 17, 20, 21};
    for (int i = 0; i < 8; ++i) CHECK(out[static_cast<size_t>(i)] == expect0[i]);
    // Patch (1,1) is the bottom-right block.
    const double expect3[] = {10, 11, 14, 15, 26, 27, 30, 31};
    for (int i = 0; i < 8; ++i) CHECK(out[static_cast<size_t>(24 + i)] == expect3[i]);
}

TEST_CASE("OpenMP kernels replicate the serial reference bit for bit") {
    const int64_t rows = 37, d = 19;
    const auto x = randu(rows * d, 10), g = randu(rows * d, 11);
    const auto gain = randu(d, 12), bias = randu(d, 13);

    SUBCASE("elementwise") {
        std::vector<double> ys(static_cast<size_t>(rows * d)), yo(ys.size());
        kern::serial::gelu(x.data(), ys.data(), rows * d);
        kern::omp::gelu(x.data(), yo.data(), rows * d);
        CHECK(ys == yo);
        kern::serial::relu(x.data(), ys.data(), rows * d);
        kern::omp::relu(x.data(), yo.data(), rows * d);
        CHECK(ys == yo);
        kern::serial::gelu_grad(x.data(), g.data(), ys.data(), rows * d);
        kern::omp::gelu_grad(x.data(), g.data(), yo.data(), rows * d);
        CHECK(ys == yo);
    }

    SUBCASE("row reductions") {
        std::vector<double> ys(static_cast<size_t>(rows * d)), yo(ys.size());
        kern::serial::softmax_rows(x.data(), ys.data(), rows, d);
        kern::omp::softmax_rows(x.data(), yo.data(), rows, d);
        CHECK(ys == yo);

        std::vector<double> xh_s(ys.size()), xh_o(ys.size()),
            is_s(static_cast<size_t>(rows)), is_o(static_cast<size_t>(rows));
        kern::serial::layer_norm_rows(x.data(), gain.data(), bias.data(), ys.data(),
                                      xh_s.data(), is_s.data(), rows, d, 1e-5);
        kern::omp::layer_norm_rows(x.data(), gain.data(), bias.data(), yo.data(),
                                   xh_o.data(), is_o.data(), rows, d, 1e-5);
        CHECK(ys == yo);
        CHECK(xh_s == xh_o);
        CHECK(is_s == is_o);

        std::vector<double> gx_s(ys.size()), gx_o(ys.size()),
            gg_s(static_cast<size_t>(d)), gg_o(static_cast<size_t>(d)),
            gb_s(static_cast<size_t>(d)), gb_o(static_cast<size_t>(d));
        kern::serial::layer_norm_rows_grad(xh_s.data(), is_s.data(), gain.data(),
                                           g.data(), gx_s.data(), gg_s.data(),
                                           gb_s.data(), rows, d);
        kern::omp::layer_norm_rows_grad(xh_o.data(), is_o.data(), gain.data(), g.data(),
                                        gx_o.data(), gg_o.data(), gb_o.data(), rows, d);
        CHECK(gx_s == gx_o);
        CHECK(gg_s == gg_o);
        CHECK(gb_s == gb_o);
    }

    SUBCASE("patchify") {
        const int64_t n = 3, c = 2, hh = 8, ww = 8, p = 4;
        const auto imgs = randu(n * c * hh * ww, 14);
        std::vector<double> os(static_cast<size_t>(n * 4 * c * p * p)), oo(os.size());
        kern::serial::patchify(imgs.data(), os.data(), n, c, hh, ww, p);
        kern::omp::patchify(imgs.data(), oo.data(), n, c, hh, ww, p);
        CHECK(os == oo);
    }
}

TEST_CASE("OpenMP matmul family matches serial within strict tolerance") {
    const int64_t m = 23, k = 31, n = 17;
    const auto a = randu(m * k, 15), b = randu(k * n, 16);
    std::vector<double> cs(static_cast<size_t>(m * n)), co(cs.size());
    kern::serial::matmul(a.data(), b.data(), cs.data(), m, k, n);
    kern::omp::matmul(a.data(), b.data(), co.data(), m, k, n);
    for (size_t i = 0; i < cs.size(); ++i)
        CHECK(cs[i] == doctest::Approx(co[i]).epsilon(1e-14));

    const int64_t bs = 5;
    const auto ba = randu(bs * m * k, 17), bb = randu(bs * k * n, 18);
    std::vector<double> ds(static_cast<size_t>(bs * m * n)), dco(ds.size());
    kern::serial::bmm(ba.data(), bb.data(), ds.data(), bs, m, k, n);
    kern::omp::bmm(ba.data(), bb.data(), dco.data(), bs, m, k, n);
    for (size_t i = 0; i < ds.size(); ++i)
        CHECK(ds[i] == doctest::Approx(dco[i]).epsilon(1e-14));
}

TEST_CASE("float instantiations exist and agree across backends") {
    const int64_t n = 64;
    std::vector<float> x(static_cast<size_t>(n)), ys(x.size()), yo(x.size());
    Rng rng(19);
    for (auto& v : x) v = static_cast<float>(rng.uniform(-2.0, 2.0));
    kern::serial::gelu(x.data(), ys.data(), n);
    kern::omp::gelu(x.data(), yo.data(), n);
    CHECK(ys == yo);
}
