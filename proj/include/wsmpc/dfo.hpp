#ifndef WSMPC_DFO_HPP_
#define WSMPC_DFO_HPP_

// Derivative-free constrained minimization by linear approximations
// (Powell's COBYLA), plus the affine [-1, 1] normalization used for the
// decision variables.
//
// The core routines follow Powell's 1992 Fortran closely, including its
// 1-based indexing and control flow, so that they can be checked line by line
// against the reference. The wrapper adds an evaluation budget, an incumbent
// that survives early termination, and a caller-supplied stop predicate.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wsmpc/errors.hpp"

namespace wsmpc {

struct SolverConfig {
  int max_iterations = 300;  // objective evaluations
  double rho_begin = 0.5;
  double rho_end = 1e-4;
  bool record_trace = false;
  // Points whose largest constraint violation is at most this are feasible.
  double feasibility_tolerance = 1e-9;

  void validate() const {
    if (max_iterations < 1) throw ValidationError("max_iterations must be >= 1");
    if (!(rho_end > 0.0) || !(rho_end <= rho_begin)) {
      throw ValidationError("trust region radii must satisfy 0 < rho_end <= rho_begin");
    }
  }
};

enum class StopReason { kEarlyStop, kMaxIterations, kConverged };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::kEarlyStop: return "early_stop";
    case StopReason::kMaxIterations: return "max_iterations";
    case StopReason::kConverged: return "converged";
  }
  return "unknown";
}

struct SolverResult {
  std::vector<double> best_point;
  double best_value = 0.0;
  double max_violation = 0.0;
  int iterations_used = 0;
  StopReason stop_reason = StopReason::kConverged;
  std::vector<double> trace;  // incumbent value after each evaluation
};

using Objective = std::function<double(std::span<const double>)>;
using ScalarConstraint = std::function<double(std::span<const double>)>;
using EarlyStop = std::function<bool(std::span<const double>)>;

// A block of m inequality constraints c_k(x) >= 0 evaluated together.
struct ConstraintSet {
  std::size_t count = 0;
  std::function<void(std::span<const double>, std::span<double>)> evaluate;
};

// lo <= x_i <= hi for every coordinate, as 2n constraints.
inline ConstraintSet box_constraints(std::size_t n, double lo, double hi) {
  return {2 * n, [n, lo, hi](std::span<const double> x, std::span<double> c) {
            for (std::size_t i = 0; i < n; ++i) {
              c[2 * i] = x[i] - lo;
              c[2 * i + 1] = hi - x[i];
            }
          }};
}

// Substituted for a non-finite objective or constraint value found during the
// search, so the point ranks behind everything finite.
inline constexpr double kWorstValue = 1e30;

namespace detail {

// Column-major matrix with Fortran-style 1-based access.
class FMatrix {
 public:
  FMatrix() = default;
  FMatrix(long rows, long cols)
      : rows_(rows), data_(static_cast<std::size_t>(rows * cols), 0.0) {}
  double& operator()(long i, long j) {
    return data_[static_cast<std::size_t>((j - 1) * rows_ + (i - 1))];
  }
  double operator()(long i, long j) const {
    return data_[static_cast<std::size_t>((j - 1) * rows_ + (i - 1))];
  }

 private:
  long rows_ = 0;
  std::vector<double> data_;
};

// 1-based vector.
class FVector {
 public:
  FVector() = default;
  explicit FVector(long n) : data_(static_cast<std::size_t>(n), 0.0) {}
  double& operator()(long i) { return data_[static_cast<std::size_t>(i - 1)]; }
  double operator()(long i) const {
    return data_[static_cast<std::size_t>(i - 1)];
  }
  std::span<double> span() { return data_; }

 private:
  std::vector<double> data_;
};

class IVector {
 public:
  IVector() = default;
  explicit IVector(long n) : data_(static_cast<std::size_t>(n), 0) {}
  long& operator()(long i) { return data_[static_cast<std::size_t>(i - 1)]; }

 private:
  std::vector<long> data_;
};

// Computes the trust-region step DX of length at most RHO that first
// minimizes the greatest violation of the linearized constraints
// A(.,k)'DX >= B(k), then uses any remaining freedom to reduce the linear
// objective -A(.,m+1)'DX. IFULL is 0 when degeneracy stopped the step short.
inline void trstlp(long n, long m, const FMatrix& a, FVector& b, double rho,
                   FVector& dx, long& ifull, IVector& iact, FMatrix& z,
                   FVector& zdota, FVector& vmultc, FVector& sdirn,
                   FVector& dxnew, FVector& vmultd) {
  long mcon, nact, icon, i, j, k, nactx = 0, isave, kk, kw, kp, kl, icount;
  double resmax, optold, optnew, tot, temp, alpha, beta, sp, spabs, acca,
      accb, ratio, zdotv, zdvabs, vsave, dd, ss, sd, stpful, step, zdotw,
      zdwabs, resold = 0.0, sumabs, sum, tempa;

  ifull = 1;
  mcon = m;
  nact = 0;
  resmax = 0.0;
  icon = 0;
  for (i = 1; i <= n; ++i) {
    for (j = 1; j <= n; ++j) z(i, j) = 0.0;
    z(i, i) = 1.0;
    dx(i) = 0.0;
  }
  if (m >= 1) {
    for (k = 1; k <= m; ++k) {
      if (b(k) > resmax) {
        resmax = b(k);
        icon = k;
      }
    }
    for (k = 1; k <= m; ++k) {
      iact(k) = k;
      vmultc(k) = resmax - b(k);
    }
  }
  if (resmax == 0.0) goto L480;
  for (i = 1; i <= n; ++i) sdirn(i) = 0.0;

  // End the current stage after 3 consecutive iterations that neither
  // reduce the best value nor grow the active set.
L60:
  optold = 0.0;
  icount = 0;
L70:
  if (mcon == m) {
    optnew = resmax;
  } else {
    optnew = 0.0;
    for (i = 1; i <= n; ++i) optnew -= dx(i) * a(i, mcon);
  }
  if (icount == 0 || optnew < optold) {
    optold = optnew;
    nactx = nact;
    icount = 3;
  } else if (nact > nactx) {
    nactx = nact;
    icount = 3;
  } else {
    --icount;
    if (icount == 0) goto L490;
  }

  // Add constraint IACT(ICON) to the active set; Givens rotations keep the
  // trailing columns of Z orthogonal to its gradient.
  if (icon <= nact) goto L260;
  kk = iact(icon);
  for (i = 1; i <= n; ++i) dxnew(i) = a(i, kk);
  tot = 0.0;
  k = n;
L100:
  if (k > nact) {
    sp = 0.0;
    spabs = 0.0;
    for (i = 1; i <= n; ++i) {
      temp = z(i, k) * dxnew(i);
      sp += temp;
      spabs += std::fabs(temp);
    }
    acca = spabs + 0.1 * std::fabs(sp);
    accb = spabs + 0.2 * std::fabs(sp);
    if (spabs >= acca || acca >= accb) sp = 0.0;
    if (tot == 0.0) {
      tot = sp;
    } else {
      kp = k + 1;
      temp = std::sqrt(sp * sp + tot * tot);
      alpha = sp / temp;
      beta = tot / temp;
      tot = temp;
      for (i = 1; i <= n; ++i) {
        temp = alpha * z(i, k) + beta * z(i, kp);
        z(i, kp) = alpha * z(i, kp) - beta * z(i, k);
        z(i, k) = temp;
      }
    }
    --k;
    goto L100;
  }

  if (tot != 0.0) {
    ++nact;
    zdota(nact) = tot;
    vmultc(icon) = vmultc(nact);
    vmultc(nact) = 0.0;
    goto L210;
  }

  // The new gradient depends on the old active ones: find the constraint to
  // drop from the multipliers of that linear combination.
  ratio = -1.0;
  k = nact;
L130:
  zdotv = 0.0;
  zdvabs = 0.0;
  for (i = 1; i <= n; ++i) {
    temp = z(i, k) * dxnew(i);
    zdotv += temp;
    zdvabs += std::fabs(temp);
  }
  acca = zdvabs + 0.1 * std::fabs(zdotv);
  accb = zdvabs + 0.2 * std::fabs(zdotv);
  if (zdvabs < acca && acca < accb) {
    temp = zdotv / zdota(k);
    if (temp > 0.0 && iact(k) <= m) {
      tempa = vmultc(k) / temp;
      if (ratio < 0.0 || tempa < ratio) ratio = tempa;
    }
    if (k >= 2) {
      kw = iact(k);
      for (i = 1; i <= n; ++i) dxnew(i) -= temp * a(i, kw);
    }
    vmultd(k) = temp;
  } else {
    vmultd(k) = 0.0;
  }
  --k;
  if (k > 0) goto L130;
  if (ratio < 0.0) goto L490;

  for (k = 1; k <= nact; ++k) {
    vmultc(k) = std::fmax(0.0, vmultc(k) - ratio * vmultd(k));
  }
  if (icon < nact) {
    isave = iact(icon);
    vsave = vmultc(icon);
    k = icon;
  L170:
    kp = k + 1;
    kw = iact(kp);
    sp = 0.0;
    for (i = 1; i <= n; ++i) sp += z(i, k) * a(i, kw);
    temp = std::sqrt(sp * sp + zdota(kp) * zdota(kp));
    alpha = zdota(kp) / temp;
    beta = sp / temp;
    zdota(kp) = alpha * zdota(k);
    zdota(k) = temp;
    for (i = 1; i <= n; ++i) {
      temp = alpha * z(i, kp) + beta * z(i, k);
      z(i, kp) = alpha * z(i, k) - beta * z(i, kp);
      z(i, k) = temp;
    }
    iact(k) = kw;
    vmultc(k) = vmultc(kp);
    k = kp;
    if (k < nact) goto L170;
    iact(k) = isave;
    vmultc(k) = vsave;
  }
  temp = 0.0;
  for (i = 1; i <= n; ++i) temp += z(i, nact) * a(i, kk);
  if (temp == 0.0) goto L490;
  zdota(nact) = temp;
  vmultc(icon) = 0.0;
  vmultc(nact) = ratio;

  // Keep the objective as the last active constraint while MCON > M.
L210:
  iact(icon) = iact(nact);
  iact(nact) = kk;
  if (mcon > m && kk != mcon) {
    k = nact - 1;
    sp = 0.0;
    for (i = 1; i <= n; ++i) sp += z(i, k) * a(i, kk);
    temp = std::sqrt(sp * sp + zdota(nact) * zdota(nact));
    alpha = zdota(nact) / temp;
    beta = sp / temp;
    zdota(nact) = alpha * zdota(k);
    zdota(k) = temp;
    for (i = 1; i <= n; ++i) {
      temp = alpha * z(i, nact) + beta * z(i, k);
      z(i, nact) = alpha * z(i, k) - beta * z(i, nact);
      z(i, k) = temp;
    }
    iact(nact) = iact(k);
    iact(k) = kk;
    temp = vmultc(k);
    vmultc(k) = vmultc(nact);
    vmultc(nact) = temp;
  }

  if (mcon > m) goto L320;
  kk = iact(nact);
  temp = 0.0;
  for (i = 1; i <= n; ++i) temp += sdirn(i) * a(i, kk);
  temp -= 1.0;
  temp /= zdota(nact);
  for (i = 1; i <= n; ++i) sdirn(i) -= temp * z(i, nact);
  goto L340;

  // Delete constraint IACT(ICON) from the active set.
L260:
  if (icon < nact) {
    isave = iact(icon);
    vsave = vmultc(icon);
    k = icon;
  L270:
    kp = k + 1;
    kk = iact(kp);
    sp = 0.0;
    for (i = 1; i <= n; ++i) sp += z(i, k) * a(i, kk);
    temp = std::sqrt(sp * sp + zdota(kp) * zdota(kp));
    alpha = zdota(kp) / temp;
    beta = sp / temp;
    zdota(kp) = alpha * zdota(k);
    zdota(k) = temp;
    for (i = 1; i <= n; ++i) {
      temp = alpha * z(i, kp) + beta * z(i, k);
      z(i, kp) = alpha * z(i, k) - beta * z(i, kp);
      z(i, k) = temp;
    }
    iact(k) = kk;
    vmultc(k) = vmultc(kp);
    k = kp;
    if (k < nact) goto L270;
    iact(k) = isave;
    vmultc(k) = vsave;
  }
  --nact;

  if (mcon > m) goto L320;
  temp = 0.0;
  for (i = 1; i <= n; ++i) temp += sdirn(i) * z(i, nact + 1);
  for (i = 1; i <= n; ++i) sdirn(i) -= temp * z(i, nact + 1);
  goto L340;

L320:
  temp = 1.0 / zdota(nact);
  for (i = 1; i <= n; ++i) sdirn(i) = temp * z(i, nact);

  // Step to the trust-region boundary, or the step that zeroes RESMAX.
L340:
  dd = rho * rho;
  sd = 0.0;
  ss = 0.0;
  for (i = 1; i <= n; ++i) {
    if (std::fabs(dx(i)) >= 1.0e-6 * rho) dd -= dx(i) * dx(i);
    sd += dx(i) * sdirn(i);
    ss += sdirn(i) * sdirn(i);
  }
  if (dd <= 0.0) goto L490;
  temp = std::sqrt(ss * dd);
  if (std::fabs(sd) >= 1.0e-6 * temp) temp = std::sqrt(ss * dd + sd * sd);
  stpful = dd / (temp + sd);
  step = stpful;
  if (mcon == m) {
    acca = step + 0.1 * resmax;
    accb = step + 0.2 * resmax;
    if (step >= acca || acca >= accb) goto L480;
    step = std::fmin(step, resmax);
  }

  for (i = 1; i <= n; ++i) dxnew(i) = dx(i) + step * sdirn(i);
  if (mcon == m) {
    resold = resmax;
    resmax = 0.0;
    for (k = 1; k <= nact; ++k) {
      kk = iact(k);
      temp = b(kk);
      for (i = 1; i <= n; ++i) temp -= a(i, kk) * dxnew(i);
      resmax = std::fmax(resmax, temp);
    }
  }

  // Multipliers that would hold at DXNEW, zeroing rounding-level values.
  k = nact;
L390:
  zdotw = 0.0;
  zdwabs = 0.0;
  for (i = 1; i <= n; ++i) {
    temp = z(i, k) * dxnew(i);
    zdotw += temp;
    zdwabs += std::fabs(temp);
  }
  acca = zdwabs + 0.1 * std::fabs(zdotw);
  accb = zdwabs + 0.2 * std::fabs(zdotw);
  if (zdwabs >= acca || acca >= accb) zdotw = 0.0;
  vmultd(k) = zdotw / zdota(k);
  if (k >= 2) {
    kk = iact(k);
    for (i = 1; i <= n; ++i) dxnew(i) -= vmultd(k) * a(i, kk);
    --k;
    goto L390;
  }
  if (mcon > m) vmultd(nact) = std::fmax(0.0, vmultd(nact));

  for (i = 1; i <= n; ++i) dxnew(i) = dx(i) + step * sdirn(i);
  if (mcon > nact) {
    kl = nact + 1;
    for (k = kl; k <= mcon; ++k) {
      kk = iact(k);
      sum = resmax - b(kk);
      sumabs = resmax + std::fabs(b(kk));
      for (i = 1; i <= n; ++i) {
        temp = a(i, kk) * dxnew(i);
        sum += temp;
        sumabs += std::fabs(temp);
      }
      acca = sumabs + 0.1 * std::fabs(sum);
      accb = sumabs + 0.2 * std::fabs(sum);
      if (sumabs >= acca || acca >= accb) sum = 0.0;
      vmultd(k) = sum;
    }
  }

  ratio = 1.0;
  icon = 0;
  for (k = 1; k <= mcon; ++k) {
    if (vmultd(k) < 0.0) {
      temp = vmultc(k) / (vmultc(k) - vmultd(k));
      if (temp < ratio) {
        ratio = temp;
        icon = k;
      }
    }
  }

  temp = 1.0 - ratio;
  for (i = 1; i <= n; ++i) dx(i) = temp * dx(i) + ratio * dxnew(i);
  for (k = 1; k <= mcon; ++k) {
    vmultc(k) = std::fmax(0.0, temp * vmultc(k) + ratio * vmultd(k));
  }
  if (mcon == m) resmax = resold + ratio * (resmax - resold);

  if (icon > 0) goto L70;
  if (step == stpful) return;
L480:
  mcon = m + 1;
  icon = mcon;
  iact(mcon) = mcon;
  vmultc(mcon) = 0.0;
  goto L60;

L490:
  if (mcon == m) goto L480;
  ifull = 0;
}

// Evaluates f and the constraints at x, writing them to f and con(1..m).
// Returns true when the caller wants the search to stop after this point.
using CalcFc = std::function<bool(std::span<const double> x, double& f,
                                  std::span<double> con)>;

enum class CobylaExit { kConverged, kBudget, kStopRequested, kRoundoff };

// The main COBYLA iteration. x holds the starting point on entry.
inline CobylaExit cobylb(long n, long m, FVector& x, double rhobeg,
                         double rhoend, long maxfun, const CalcFc& calcfc) {
  const long np = n + 1;
  const long mp = m + 1;
  const long mpp = m + 2;
  const double alpha = 0.25;
  const double beta = 2.1;
  const double gamma = 0.5;
  const double delta = 1.1;

  FVector con(mpp);
  FMatrix sim(n, np);
  FMatrix simi(n, n);
  FMatrix datmat(mpp, np);
  FMatrix a(n, mp);
  FVector vsig(n), veta(n), sigbar(n), dx(n), w(n);
  FMatrix z(n, n);
  FVector zdota(n), vmultc(mp), sdirn(n), dxnew(n), vmultd(mp);
  IVector iact(mp);

  long i, j, k, nbest, l, iflag = 0, ifull = 0;
  double resmax, phimin, tempa, error, parsig = 0.0, pareta = 0.0, wsig, weta,
      cvmaxp, cvmaxm, sum = 0.0, dxsign, resnew, barmu, phi, prerec = 0.0,
      prerem = 0.0, vmold, vmnew, trured, ratio, edgmax, denom, cmin = 0.0,
      cmax = 0.0, f = 0.0, temp;
  CobylaExit exit = CobylaExit::kConverged;

  double rho = rhobeg;
  double parmu = 0.0;
  long nfvals = 0;
  temp = 1.0 / rho;
  for (i = 1; i <= n; ++i) {
    sim(i, np) = x(i);
    for (j = 1; j <= n; ++j) simi(i, j) = 0.0;
    sim(i, i) = rho;
    simi(i, i) = temp;
  }
  long jdrop = np;
  long ibrnch = 0;

L40:
  if (nfvals >= maxfun && nfvals > 0) {
    exit = CobylaExit::kBudget;
    goto L600;
  }
  ++nfvals;
  {
    const bool stop = calcfc(x.span(), f, con.span().subspan(0, m));
    resmax = 0.0;
    for (k = 1; k <= m; ++k) resmax = std::fmax(resmax, -con(k));
    if (stop) {
      exit = CobylaExit::kStopRequested;
      goto L600;
    }
  }
  con(mp) = f;
  con(mpp) = resmax;
  if (ibrnch == 1) goto L440;

  // DATMAT holds, per simplex vertex, the constraint values, the objective
  // and the greatest constraint violation.
  for (k = 1; k <= mpp; ++k) datmat(k, jdrop) = con(k);
  if (nfvals > np) goto L130;

  // Swap the new vertex of the initial simplex with the optimal one if it is
  // better, then pick the next vertex.
  if (jdrop <= n) {
    if (datmat(mp, np) <= f) {
      x(jdrop) = sim(jdrop, np);
    } else {
      sim(jdrop, np) = x(jdrop);
      for (k = 1; k <= mpp; ++k) {
        datmat(k, jdrop) = datmat(k, np);
        datmat(k, np) = con(k);
      }
      for (k = 1; k <= jdrop; ++k) {
        sim(jdrop, k) = -rho;
        temp = 0.0;
        for (i = k; i <= jdrop; ++i) temp -= simi(i, k);
        simi(jdrop, k) = temp;
      }
    }
  }
  if (nfvals <= n) {
    jdrop = nfvals;
    x(jdrop) += rho;
    goto L40;
  }
L130:
  ibrnch = 1;

  // Identify the optimal vertex of the current simplex.
L140:
  phimin = datmat(mp, np) + parmu * datmat(mpp, np);
  nbest = np;
  for (j = 1; j <= n; ++j) {
    temp = datmat(mp, j) + parmu * datmat(mpp, j);
    if (temp < phimin) {
      nbest = j;
      phimin = temp;
    } else if (temp == phimin && parmu == 0.0) {
      if (datmat(mpp, j) < datmat(mpp, nbest)) nbest = j;
    }
  }

  if (nbest <= n) {
    for (i = 1; i <= mpp; ++i) {
      temp = datmat(i, np);
      datmat(i, np) = datmat(i, nbest);
      datmat(i, nbest) = temp;
    }
    for (i = 1; i <= n; ++i) {
      temp = sim(i, nbest);
      sim(i, nbest) = 0.0;
      sim(i, np) += temp;
      tempa = 0.0;
      for (k = 1; k <= n; ++k) {
        sim(i, k) -= temp;
        tempa -= simi(k, i);
      }
      simi(nbest, i) = tempa;
    }
  }

  // Give up if SIMI is no longer a usable inverse of the simplex edges.
  error = 0.0;
  for (i = 1; i <= n; ++i) {
    for (j = 1; j <= n; ++j) {
      temp = i == j ? -1.0 : 0.0;
      for (k = 1; k <= n; ++k) temp += simi(i, k) * sim(k, j);
      error = std::fmax(error, std::fabs(temp));
    }
  }
  if (error > 0.1) {
    exit = CobylaExit::kRoundoff;
    goto L600;
  }

  // Linear models: constraint gradients, then minus the objective gradient.
  for (k = 1; k <= mp; ++k) {
    con(k) = -datmat(k, np);
    for (j = 1; j <= n; ++j) w(j) = datmat(k, j) + con(k);
    for (i = 1; i <= n; ++i) {
      temp = 0.0;
      for (j = 1; j <= n; ++j) temp += w(j) * simi(j, i);
      if (k == mp) temp = -temp;
      a(i, k) = temp;
    }
  }

  // Simplex acceptability (sigma and eta tests).
  iflag = 1;
  parsig = alpha * rho;
  pareta = beta * rho;
  for (j = 1; j <= n; ++j) {
    wsig = 0.0;
    weta = 0.0;
    for (i = 1; i <= n; ++i) {
      wsig += simi(j, i) * simi(j, i);
      weta += sim(i, j) * sim(i, j);
    }
    vsig(j) = 1.0 / std::sqrt(wsig);
    veta(j) = std::sqrt(weta);
    if (vsig(j) < parsig || veta(j) > pareta) iflag = 0;
  }

  if (ibrnch == 1 || iflag == 1) goto L370;
  jdrop = 0;
  temp = pareta;
  for (j = 1; j <= n; ++j) {
    if (veta(j) > temp) {
      jdrop = j;
      temp = veta(j);
    }
  }
  if (jdrop == 0) {
    for (j = 1; j <= n; ++j) {
      if (vsig(j) < temp) {
        jdrop = j;
        temp = vsig(j);
      }
    }
  }

  // Geometry step towards a new vertex.
  temp = gamma * rho * vsig(jdrop);
  for (i = 1; i <= n; ++i) dx(i) = temp * simi(jdrop, i);
  cvmaxp = 0.0;
  cvmaxm = 0.0;
  for (k = 1; k <= mp; ++k) {
    sum = 0.0;
    for (i = 1; i <= n; ++i) sum += a(i, k) * dx(i);
    if (k < mp) {
      temp = datmat(k, np);
      cvmaxp = std::fmax(cvmaxp, -sum - temp);
      cvmaxm = std::fmax(cvmaxm, sum - temp);
    }
  }
  dxsign = 1.0;
  if (parmu * (cvmaxp - cvmaxm) > sum + sum) dxsign = -1.0;

  temp = 0.0;
  for (i = 1; i <= n; ++i) {
    dx(i) *= dxsign;
    sim(i, jdrop) = dx(i);
    temp += simi(jdrop, i) * dx(i);
  }
  for (i = 1; i <= n; ++i) simi(jdrop, i) /= temp;
  for (j = 1; j <= n; ++j) {
    if (j != jdrop) {
      temp = 0.0;
      for (i = 1; i <= n; ++i) temp += simi(j, i) * dx(i);
      for (i = 1; i <= n; ++i) simi(j, i) -= temp * simi(jdrop, i);
    }
    x(j) = sim(j, np) + dx(j);
  }
  goto L40;

  // Trust-region step.
L370:
  ifull = 0;
  trstlp(n, m, a, con, rho, dx, ifull, iact, z, zdota, vmultc, sdirn, dxnew,
         vmultd);
  if (ifull == 0) {
    temp = 0.0;
    for (i = 1; i <= n; ++i) temp += dx(i) * dx(i);
    if (temp < 0.25 * rho * rho) {
      ibrnch = 1;
      goto L550;
    }
  }

  // Predicted change of F and of the greatest constraint violation.
  resnew = 0.0;
  con(mp) = 0.0;
  for (k = 1; k <= mp; ++k) {
    sum = con(k);
    for (i = 1; i <= n; ++i) sum -= a(i, k) * dx(i);
    if (k < mp) resnew = std::fmax(resnew, sum);
  }

  barmu = 0.0;
  prerec = datmat(mpp, np) - resnew;
  if (prerec > 0.0) barmu = sum / prerec;
  if (parmu < 1.5 * barmu) {
    parmu = 2.0 * barmu;
    phi = datmat(mp, np) + parmu * datmat(mpp, np);
    for (j = 1; j <= n; ++j) {
      temp = datmat(mp, j) + parmu * datmat(mpp, j);
      if (temp < phi) goto L140;
      if (temp == phi && parmu == 0.0) {
        if (datmat(mpp, j) < datmat(mpp, np)) goto L140;
      }
    }
  }
  prerem = parmu * prerec - sum;

  for (i = 1; i <= n; ++i) x(i) = sim(i, np) + dx(i);
  ibrnch = 1;
  goto L40;

L440:
  vmold = datmat(mp, np) + parmu * datmat(mpp, np);
  vmnew = f + parmu * resmax;
  trured = vmold - vmnew;
  if (parmu == 0.0 && f == datmat(mp, np)) {
    prerem = prerec;
    trured = datmat(mpp, np) - resmax;
  }

  // Choose the vertex that x(*) replaces; mandatory when TRURED > 0.
  ratio = trured <= 0.0 ? 1.0 : 0.0;
  jdrop = 0;
  for (j = 1; j <= n; ++j) {
    temp = 0.0;
    for (i = 1; i <= n; ++i) temp += simi(j, i) * dx(i);
    temp = std::fabs(temp);
    if (temp > ratio) {
      jdrop = j;
      ratio = temp;
    }
    sigbar(j) = temp * vsig(j);
  }

  edgmax = delta * rho;
  l = 0;
  for (j = 1; j <= n; ++j) {
    if (sigbar(j) >= parsig || sigbar(j) >= vsig(j)) {
      temp = veta(j);
      if (trured > 0.0) {
        temp = 0.0;
        for (i = 1; i <= n; ++i) {
          temp += (dx(i) - sim(i, j)) * (dx(i) - sim(i, j));
        }
        temp = std::sqrt(temp);
      }
      if (temp > edgmax) {
        l = j;
        edgmax = temp;
      }
    }
  }
  if (l > 0) jdrop = l;
  if (jdrop == 0) goto L550;

  temp = 0.0;
  for (i = 1; i <= n; ++i) {
    sim(i, jdrop) = dx(i);
    temp += simi(jdrop, i) * dx(i);
  }
  for (i = 1; i <= n; ++i) simi(jdrop, i) /= temp;
  for (j = 1; j <= n; ++j) {
    if (j != jdrop) {
      temp = 0.0;
      for (i = 1; i <= n; ++i) temp += simi(j, i) * dx(i);
      for (i = 1; i <= n; ++i) simi(j, i) -= temp * simi(jdrop, i);
    }
  }
  for (k = 1; k <= mpp; ++k) datmat(k, jdrop) = con(k);

  if (trured > 0.0 && trured >= 0.1 * prerem) goto L140;
L550:
  if (iflag == 0) {
    ibrnch = 0;
    goto L140;
  }

  // Reduce RHO and reset PARMU.
  if (rho > rhoend) {
    rho *= 0.5;
    if (rho <= 1.5 * rhoend) rho = rhoend;
    if (parmu > 0.0) {
      denom = 0.0;
      for (k = 1; k <= mp; ++k) {
        cmin = datmat(k, np);
        cmax = cmin;
        for (i = 1; i <= n; ++i) {
          cmin = std::fmin(cmin, datmat(k, i));
          cmax = std::fmax(cmax, datmat(k, i));
        }
        if (k <= m && cmin < 0.5 * cmax) {
          temp = std::fmax(cmax, 0.0) - cmin;
          denom = denom <= 0.0 ? temp : std::fmin(denom, temp);
        }
      }
      if (denom == 0.0) {
        parmu = 0.0;
      } else if (cmax - cmin < parmu * denom) {
        parmu = (cmax - cmin) / denom;
      }
    }
    goto L140;
  }
  exit = CobylaExit::kConverged;

L600:
  for (i = 1; i <= n; ++i) x(i) = sim(i, np);
  return exit;
}

}  // namespace detail

// Minimizes objective(x) subject to constraints(x) >= 0, starting from x0.
// One iteration is one objective evaluation. The incumbent is the best
// feasible point seen (or the least infeasible one if none is feasible);
// early_stop is consulted each time the incumbent changes.
inline SolverResult minimize(const Objective& objective,
                             const ConstraintSet& constraints,
                             std::vector<double> x0, const SolverConfig& config,
                             const EarlyStop& early_stop = {}) {
  config.validate();
  if (x0.empty()) throw ValidationError("decision vector must not be empty");
  const long n = static_cast<long>(x0.size());
  const long m = static_cast<long>(constraints.count);

  SolverResult result;
  result.best_point = x0;
  bool have_incumbent = false;
  bool incumbent_feasible = false;
  bool stopped_early = false;
  std::vector<double> scratch_con(constraints.count);

  const detail::CalcFc calcfc = [&](std::span<const double> x, double& f,
                                    std::span<double> con) {
    const bool first = result.iterations_used == 0;
    f = objective(x);
    if (!std::isfinite(f)) {
      if (first) throw NumericalError("objective is not finite at the starting point");
      f = kWorstValue;
    }
    double violation = 0.0;
    if (m > 0) {
      constraints.evaluate(x, con);
      for (double& c : con) {
        if (!std::isfinite(c)) c = -kWorstValue;
        violation = std::max(violation, -c);
      }
    }
    ++result.iterations_used;

    const bool feasible = violation <= config.feasibility_tolerance;
    bool improved = false;
    if (!have_incumbent) {
      improved = true;
    } else if (feasible) {
      improved = !incumbent_feasible || f < result.best_value;
    } else if (!incumbent_feasible) {
      improved = violation < result.max_violation ||
                 (violation == result.max_violation && f < result.best_value);
    }
    if (improved) {
      have_incumbent = true;
      incumbent_feasible = feasible;
      result.best_point.assign(x.begin(), x.end());
      result.best_value = f;
      result.max_violation = violation;
    }
    if (config.record_trace) result.trace.push_back(result.best_value);
    if (improved && early_stop && early_stop(result.best_point)) {
      stopped_early = true;
      return true;
    }
    return false;
  };

  detail::FVector x(n);
  for (long i = 1; i <= n; ++i) x(i) = x0[static_cast<std::size_t>(i - 1)];
  const detail::CobylaExit exit =
      detail::cobylb(n, m, x, config.rho_begin, config.rho_end,
                     config.max_iterations, calcfc);

  if (stopped_early) {
    result.stop_reason = StopReason::kEarlyStop;
  } else if (exit == detail::CobylaExit::kBudget) {
    result.stop_reason = StopReason::kMaxIterations;
  } else {
    result.stop_reason = StopReason::kConverged;
  }
  return result;
}

// Convenience overload taking one function per constraint.
inline SolverResult minimize(const Objective& objective,
                             const std::vector<ScalarConstraint>& constraints,
                             std::vector<double> x0, const SolverConfig& config,
                             const EarlyStop& early_stop = {}) {
  ConstraintSet set{constraints.size(),
                    [&constraints](std::span<const double> x, std::span<double> c) {
                      for (std::size_t k = 0; k < constraints.size(); ++k) {
                        c[k] = constraints[k](x);
                      }
                    }};
  return minimize(objective, set, std::move(x0), config, early_stop);
}

struct Bounds {
  double lo = -1.0;
  double hi = 1.0;
};

// Affine map of each coordinate from [lo, hi] onto [-1, 1].
inline std::vector<double> normalize(std::span<const double> point,
                                     std::span<const Bounds> bounds) {
  if (point.size() != bounds.size()) {
    throw ValidationError("normalize: dimension mismatch (" +
                          std::to_string(point.size()) + " vs " +
                          std::to_string(bounds.size()) + ")");
  }
  std::vector<double> out(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    const Bounds& b = bounds[i];
    if (!(b.lo < b.hi)) throw ValidationError("normalize: bounds need lo < hi");
    out[i] = (2.0 * point[i] - (b.lo + b.hi)) / (b.hi - b.lo);
  }
  return out;
}

inline std::vector<double> denormalize(std::span<const double> point,
                                       std::span<const Bounds> bounds) {
  if (point.size() != bounds.size()) {
    throw ValidationError("denormalize: dimension mismatch (" +
                          std::to_string(point.size()) + " vs " +
                          std::to_string(bounds.size()) + ")");
  }
  std::vector<double> out(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    const Bounds& b = bounds[i];
    if (!(b.lo < b.hi)) throw ValidationError("denormalize: bounds need lo < hi");
    out[i] = 0.5 * (b.lo + b.hi) + 0.5 * (b.hi - b.lo) * point[i];
  }
  return out;
}

}  // namespace wsmpc

#endif  // WSMPC_DFO_HPP_
