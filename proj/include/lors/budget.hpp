#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "lors/tensor.hpp"

namespace lors {

/// Closed-form parameter accounting for one stacked d×h weight, dense versus
/// low-rank-residual form.
struct BudgetQuery {
    enum class Kind { kStatic, kAdaptive };
    Kind kind = Kind::kStatic;
    long long d = 0;
    long long h = 0;
    long long query_dim = 0;  // adaptive only
    long long rank = 0;
    long long groups = 1;  // K, uniform across layers
    long long layers = 1;  // N

    void validate() const {
        if (d <= 0 || h <= 0 || rank <= 0 || groups < 1 || layers < 1 ||
            (kind == Kind::kAdaptive && query_dim <= 0)) {
            throw ConfigError("budget query requires positive extents, K >= 1, N >= 1");
        }
    }
};

/// Per-layer parameters of the plain stacked weight: d·h if static,
/// d_q·d·h if generated from a query.
inline long long count_dense(const BudgetQuery& q) {
    q.validate();
    if (q.kind == BudgetQuery::Kind::kStatic) return q.d * q.h;
    return q.query_dim * q.d * q.h;
}

/// Average per-layer parameters with the low-rank residual structure. The
/// shared term is amortized over the N layers, so the result is fractional:
///   static:   d·h/N + K·(d·r + r·h)
///   adaptive: d_q·d·h/N + K·(d_q·r² + d·r + r·h)
inline double count_lors(const BudgetQuery& q) {
    q.validate();
    if (q.kind == BudgetQuery::Kind::kStatic) {
        return static_cast<double>(q.d * q.h) / static_cast<double>(q.layers) +
               static_cast<double>(q.groups * (q.d * q.rank + q.rank * q.h));
    }
    return static_cast<double>(q.query_dim * q.d * q.h) / static_cast<double>(q.layers) +
           static_cast<double>(q.groups * (q.query_dim * q.rank * q.rank + q.d * q.rank +
                                           q.rank * q.h));
}

/// De-amortized whole-stack total (integer): one shared term plus the private
/// terms of every layer, under a per-layer group schedule.
inline long long count_lors_total(BudgetQuery::Kind kind, long long d, long long h,
                                  long long query_dim, long long rank,
                                  const std::vector<int>& group_schedule) {
    long long shared = (kind == BudgetQuery::Kind::kStatic) ? d * h : query_dim * d * h;
    long long per_group = (kind == BudgetQuery::Kind::kStatic)
                              ? d * rank + rank * h
                              : query_dim * rank * rank + d * rank + rank * h;
    long long total = shared;
    for (int k : group_schedule) total += static_cast<long long>(k) * per_group;
    return total;
}

// ---------------------------------------------------------------------------
// Report generation.
// ---------------------------------------------------------------------------

inline double round_half_up(double v, int decimals) {
    const double p = std::pow(10.0, decimals);
    return std::floor(v * p + 0.5) / p;
}

struct BudgetRow {
    long long rank = 0;
    double with_lors = 0.0;     // raw average params/layer
    long long without_lors = 0;  // raw params/layer
    // Display convention: megaparams rounded half-up to 2 decimals, and the
    // percentage taken as the ratio of those rounded values (1 decimal).
    double with_mega = 0.0;
    double without_mega = 0.0;
    double percentage = 0.0;
};

struct BudgetReport {
    BudgetQuery base;
    std::vector<BudgetRow> rows;
};

inline BudgetReport table_report(const std::vector<long long>& ranks, BudgetQuery q) {
    if (ranks.empty()) throw ConfigError("table_report needs at least one rank");
    BudgetReport report;
    report.base = q;
    for (long long r : ranks) {
        q.rank = r;
        BudgetRow row;
        row.rank = r;
        row.with_lors = count_lors(q);
        row.without_lors = count_dense(q);
        row.with_mega = round_half_up(row.with_lors / 1e6, 2);
        row.without_mega = round_half_up(static_cast<double>(row.without_lors) / 1e6, 2);
        row.percentage = 100.0 * row.with_mega / row.without_mega;
        report.rows.push_back(row);
    }
    return report;
}

inline std::string format_budget_table(const BudgetReport& report) {
    const bool adaptive = report.base.kind == BudgetQuery::Kind::kAdaptive;
    const std::string tag = adaptive ? "adaptive" : "static";
    std::ostringstream os;
    os << "# " << tag << "  d=" << report.base.d << " h=" << report.base.h;
    if (adaptive) os << " d_q=" << report.base.query_dim;
    os << " K=" << report.base.groups << " N=" << report.base.layers << "\n";
    os << std::left << std::setw(22) << "";
    for (const BudgetRow& row : report.rows) {
        os << std::right << std::setw(10) << ("r=" + std::to_string(row.rank));
    }
    os << "\n" << std::left << std::setw(22) << "with lors (M/layer)";
    os << std::fixed << std::setprecision(2);
    for (const BudgetRow& row : report.rows) os << std::right << std::setw(10) << row.with_mega;
    os << "\n" << std::left << std::setw(22) << "without lors (M/layer)";
    for (const BudgetRow& row : report.rows) {
        os << std::right << std::setw(10) << row.without_mega;
    }
    os << "\n" << std::left << std::setw(22) << "percentage (%)";
    os << std::setprecision(1);
    for (const BudgetRow& row : report.rows) {
        os << std::right << std::setw(10) << round_half_up(row.percentage, 1);
    }
    os << "\n";
    return os.str();
}

inline std::string format_budget_csv(const BudgetReport& report) {
    std::ostringstream os;
    os << "kind,r,with_lors,without_lors,with_mega,without_mega,percentage\n";
    const std::string tag =
        report.base.kind == BudgetQuery::Kind::kAdaptive ? "adaptive" : "static";
    for (const BudgetRow& row : report.rows) {
        os << tag << "," << row.rank << "," << std::setprecision(17) << row.with_lors << ","
           << row.without_lors << "," << std::fixed << std::setprecision(2) << row.with_mega
           << "," << row.without_mega << "," << std::setprecision(1)
           << round_half_up(row.percentage, 1) << "\n";
        os.unsetf(std::ios::fixed);
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Exact enumeration of constructed models.
// ---------------------------------------------------------------------------

/// One component's exact parameter counts, split the way the closed forms
/// count them: weights by shared/private, biases and normalization
/// parameters kept out of the weight columns.
struct CountRow {
    std::string component;
    long long shared = 0;
    long long private_ = 0;
    long long bias = 0;
    long long other = 0;  // layer-norm scales/offsets and similar

    long long weights() const { return shared + private_; }
    long long total() const { return shared + private_ + bias + other; }
};

struct ModelCount {
    std::vector<CountRow> rows;

    long long weights() const {
        long long t = 0;
        for (const CountRow& r : rows) t += r.weights();
        return t;
    }
    long long total() const {
        long long t = 0;
        for (const CountRow& r : rows) t += r.total();
        return t;
    }
    long long shared() const {
        long long t = 0;
        for (const CountRow& r : rows) t += r.shared;
        return t;
    }
    long long private_() const {
        long long t = 0;
        for (const CountRow& r : rows) t += r.private_;
        return t;
    }

    std::string to_string() const {
        std::ostringstream os;
        os << std::left << std::setw(28) << "component" << std::right << std::setw(12)
           << "shared" << std::setw(12) << "private" << std::setw(10) << "bias"
           << std::setw(10) << "other" << std::setw(14) << "total" << "\n";
        for (const CountRow& r : rows) {
            os << std::left << std::setw(28) << r.component << std::right << std::setw(12)
               << r.shared << std::setw(12) << r.private_ << std::setw(10) << r.bias
               << std::setw(10) << r.other << std::setw(14) << r.total() << "\n";
        }
        os << std::left << std::setw(28) << "total" << std::right << std::setw(12) << shared()
           << std::setw(12) << private_() << std::setw(10) << bias_total() << std::setw(10)
           << other_total() << std::setw(14) << total() << "\n";
        return os.str();
    }

    long long bias_total() const {
        long long t = 0;
        for (const CountRow& r : rows) t += r.bias;
        return t;
    }
    long long other_total() const {
        long long t = 0;
        for (const CountRow& r : rows) t += r.other;
        return t;
    }
};

// ---------------------------------------------------------------------------
// Group schedules used across experiments.
// ---------------------------------------------------------------------------

/// 1,1,2,2,3,3-style ramp generalized to any depth: K_i = 1 + floor(3i/N).
inline std::vector<int> ramp_schedule(int layers) {
    std::vector<int> k(static_cast<std::size_t>(layers));
    for (int i = 0; i < layers; ++i) k[static_cast<std::size_t>(i)] = 1 + (3 * i) / layers;
    return k;
}

inline std::vector<int> uniform_schedule(int layers, int groups) {
    return std::vector<int>(static_cast<std::size_t>(layers), groups);
}

/// {1×(N-3), 2, 4, 6}: extra capacity in the last three layers.
inline std::vector<int> tail_heavy_schedule(int layers) {
    if (layers < 3) return uniform_schedule(layers, 1);
    std::vector<int> k(static_cast<std::size_t>(layers), 1);
    k[static_cast<std::size_t>(layers - 3)] = 2;
    k[static_cast<std::size_t>(layers - 2)] = 4;
    k[static_cast<std::size_t>(layers - 1)] = 6;
    return k;
}

/// {6, 4, 2, 1×(N-3)}: extra capacity in the first three layers.
inline std::vector<int> head_heavy_schedule(int layers) {
    if (layers < 3) return uniform_schedule(layers, 1);
    std::vector<int> k(static_cast<std::size_t>(layers), 1);
    k[0] = 6;
    k[1] = 4;
    k[2] = 2;
    return k;
}

}  // namespace lors
