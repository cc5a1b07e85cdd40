#pragma once

#include <cstddef>
#include <string_view>

// Data-parallel inner loops shared by the model, trainers, privacy mechanism
// and evaluation. Two implementations are provided: a scalar reference and an
// AVX2 variant; the active one is selected at runtime from CPU capabilities
// (override with kern::force(), exposed as the CLI's --kernel flag).
//
// Elementwise kernels (axpy, add, scal, toward, clamp) are bit-identical
// across implementations: the AVX2 code uses separate multiply/add so each
// element sees the same correctly-rounded operations as the scalar loop.
// Reductions (dot, sq_norm, sq_dist) use lane accumulators and may differ
// from the scalar sum in the last ulps; callers must not rely on their exact
// rounding. tests/test_kernels.cpp pins both contracts.

namespace rfrec::kern {

enum class Isa { scalar, avx2 };

namespace scalar {
double dot(const double* x, const double* y, std::size_t n);
double sq_norm(const double* x, std::size_t n);
double sq_dist(const double* x, const double* y, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);   // y += a*x
void add(double* y, const double* x, std::size_t n);              // y += x
void scal(double a, double* x, std::size_t n);                    // x *= a
void toward(double* y, double c, const double* t, std::size_t n); // y -= c*(y-t)
void clamp(const double* x, double lo, double hi, double* out, std::size_t n);
bool all_finite(const double* x, std::size_t n);
}  // namespace scalar

namespace avx2 {
bool available();  // compiled in AND supported by this CPU
double dot(const double* x, const double* y, std::size_t n);
double sq_norm(const double* x, std::size_t n);
double sq_dist(const double* x, const double* y, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void add(double* y, const double* x, std::size_t n);
void scal(double a, double* x, std::size_t n);
void toward(double* y, double c, const double* t, std::size_t n);
void clamp(const double* x, double lo, double hi, double* out, std::size_t n);
bool all_finite(const double* x, std::size_t n);
}  // namespace avx2

// dispatched entry points
double dot(const double* x, const double* y, std::size_t n);
double sq_norm(const double* x, std::size_t n);
double sq_dist(const double* x, const double* y, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void add(double* y, const double* x, std::size_t n);
void scal(double a, double* x, std::size_t n);
void toward(double* y, double c, const double* t, std::size_t n);
void clamp(const double* x, double lo, double hi, double* out, std::size_t n);
bool all_finite(const double* x, std::size_t n);

Isa active();
std::string_view active_name();
void force(Isa isa);  // throws ConfigError if the ISA is unavailable

}  // namespace rfrec::kern
