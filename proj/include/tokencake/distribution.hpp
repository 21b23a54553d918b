// Copyright 2026 The tokencake-sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include <json.hpp>

namespace tokencake {

enum class DistKind { Constant, Poisson, Exponential, Uniform, LogNormal };

std::string_view to_string(DistKind kind);

/// A small parametric distribution used for token lengths and tool latencies.
///
/// Parameter meaning by kind:
///   constant    -> value
///   poisson     -> mean
///   exponential -> mean
///   uniform     -> low, high
///   lognormal   -> median, sigma
struct Distribution {
    DistKind kind = DistKind::Constant;
    double p0 = 1.0;
    double p1 = 0.0;

    static Distribution constant(double value) { return {DistKind::Constant, value, 0.0}; }
    static Distribution poisson(double mean) { return {DistKind::Poisson, mean, 0.0}; }
    static Distribution exponential(double mean) { return {DistKind::Exponential, mean, 0.0}; }
    static Distribution uniform(double low, double high) { return {DistKind::Uniform, low, high}; }
    static Distribution lognormal(double median, double sigma) { return {DistKind::LogNormal, median, sigma}; }

    /// True when every parameter is strictly positive (and low < high for uniform).
    bool valid() const;
    double mean() const;
    double sample(std::mt19937_64& rng) const;
    /// Sample rounded to a whole count, never below 1.
    std::int64_t sample_count(std::mt19937_64& rng) const;

    bool operator==(const Distribution&) const = default;
};

void to_json(nlohmann::json& j, const Distribution& d);
void from_json(const nlohmann::json& j, Distribution& d);

/// Seed for a named sub-stream; independent streams never perturb one another.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0);

}  // namespace tokencake
