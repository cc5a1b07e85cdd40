#include "rfrec/kernels.hpp"

#include <cmath>

#include "rfrec/errors.hpp"

namespace rfrec::kern {

namespace scalar {

double dot(const double* x, const double* y, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}

double sq_norm(const double* x, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i] * x[i];
    return s;
}

double sq_dist(const double* x, const double* y, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = x[i] - y[i];
        s += d * d;
    }
    return s;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void add(double* y, const double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += x[i];
}

void scal(double a, double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

void toward(double* y, double c, const double* t, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] -= c * (y[i] - t[i]);
}

void clamp(const double* x, double lo, double hi, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        double v = x[i] < hi ? x[i] : hi;
        out[i] = v > lo ? v : lo;
    }
}

bool all_finite(const double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(x[i])) return false;
    return true;
}

}  // namespace scalar

namespace {

struct Table {
    double (*dot)(const double*, const double*, std::size_t);
    double (*sq_norm)(const double*, std::size_t);
    double (*sq_dist)(const double*, const double*, std::size_t);
    void (*axpy)(double, const double*, double*, std::size_t);
    void (*add)(double*, const double*, std::size_t);
    void (*scal)(double, double*, std::size_t);
    void (*toward)(double*, double, const double*, std::size_t);
    void (*clamp)(const double*, double, double, double*, std::size_t);
    bool (*all_finite)(const double*, std::size_t);
    Isa isa;
};

constexpr Table kScalarTable{scalar::dot,  scalar::sq_norm, scalar::sq_dist,
                             scalar::axpy, scalar::add,     scalar::scal,
                             scalar::toward, scalar::clamp, scalar::all_finite,
                             Isa::scalar};

const Table kAvx2Table{avx2::dot,  avx2::sq_norm, avx2::sq_dist,
                       avx2::axpy, avx2::add,     avx2::scal,
                       avx2::toward, avx2::clamp, avx2::all_finite,
                       Isa::avx2};

const Table* pick_initial() {
    return avx2::available() ? &kAvx2Table : &kScalarTable;
}

const Table*& table() {
    static const Table* t = pick_initial();
    return t;
}

}  // namespace

double dot(const double* x, const double* y, std::size_t n) { return table()->dot(x, y, n); }
double sq_norm(const double* x, std::size_t n) { return table()->sq_norm(x, n); }
double sq_dist(const double* x, const double* y, std::size_t n) { return table()->sq_dist(x, y, n); }
void axpy(double a, const double* x, double* y, std::size_t n) { table()->axpy(a, x, y, n); }
void add(double* y, const double* x, std::size_t n) { table()->add(y, x, n); }
void scal(double a, double* x, std::size_t n) { table()->scal(a, x, n); }
void toward(double* y, double c, const double* t, std::size_t n) { table()->toward(y, c, t, n); }
void clamp(const double* x, double lo, double hi, double* out, std::size_t n) {
    table()->clamp(x, lo, hi, out, n);
}
bool all_finite(const double* x, std::size_t n) { return table()->all_finite(x, n); }

Isa active() { return table()->isa; }

std::string_view active_name() { return active() == Isa::avx2 ? "avx2" : "scalar"; }

void force(Isa isa) {
    if (isa == Isa::avx2) {
        if (!avx2::available()) throw ConfigError("AVX2 kernels unavailable on this host");
        table() = &kAvx2Table;
    } else {
        table() = &kScalarTable;
    }
}

}  // namespace rfrec::kern
