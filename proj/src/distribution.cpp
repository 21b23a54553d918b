// Copyright 2026 The tokencake-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "tokencake/distribution.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tokencake {

std::string_view to_string(DistKind kind) {
    switch (kind) {
        case DistKind::Constant: return "constant";
        case DistKind::Poisson: return "poisson";
        case DistKind::Exponential: return "exponential";
        case DistKind::Uniform: return "uniform";
        case DistKind::LogNormal: return "lognormal";
    }
    return "unknown";
}

bool Distribution::valid() const {
    switch (kind) {
        case DistKind::Uniform: return p0 > 0.0 && p1 > p0;
        case DistKind::LogNormal: return p0 > 0.0 && p1 > 0.0;
        default: return p0 > 0.0;
    }
}

double Distribution::mean() const {
    switch (kind) {
        case DistKind::Constant:
        case DistKind::Poisson:
        case DistKind::Exponential: return p0;
        case DistKind::Uniform: return 0.5 * (p0 + p1);
        case DistKind::LogNormal: return p0 * std::exp(0.5 * p1 * p1);
    }
    return p0;
}

double Distribution::sample(std::mt19937_64& rng) const {
    switch (kind) {
        case DistKind::Constant: return p0;
        case DistKind::Poisson: return static_cast<double>(std::poisson_distribution<std::int64_t>(p0)(rng));
        case DistKind::Exponential: return std::exponential_distribution<double>(1.0 / p0)(rng);
        case DistKind::Uniform: return std::uniform_real_distribution<double>(p0, p1)(rng);
        case DistKind::LogNormal: return std::lognormal_distribution<double>(std::log(p0), p1)(rng);
    }
    return p0;
}

std::int64_t Distribution::sample_count(std::mt19937_64& rng) const {
    return std::max<std::int64_t>(1, std::llround(sample(rng)));
}

void to_json(nlohmann::json& j, const Distribution& d) {
    j = nlohmann::json{{"kind", std::string(to_string(d.kind))}};
    switch (d.kind) {
        case DistKind::Constant: j["value"] = d.p0; break;
        case DistKind::Poisson:
        case DistKind::Exponential: j["mean"] = d.p0; break;
        case DistKind::Uniform:
            j["low"] = d.p0;
            j["high"] = d.p1;
            break;
        case DistKind::LogNormal:
            j["median"] = d.p0;
            j["sigma"] = d.p1;
            break;
    }
}

void from_json(const nlohmann::json& j, Distribution& d) {
    if (!j.is_object()) throw std::invalid_argument("distribution must be an object");
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "constant") {
        d = Distribution::constant(j.at("value").get<double>());
    } else if (kind == "poisson") {
        d = Distribution::poisson(j.at("mean").get<double>());
    } else if (kind == "exponential") {
        d = Distribution::exponential(j.at("mean").get<double>());
    } else if (kind == "uniform") {
        d = Distribution::uniform(j.at("low").get<double>(), j.at("high").get<double>());
    } else if (kind == "lognormal") {
        d = Distribution::lognormal(j.at("median").get<double>(), j.at("sigma").get<double>());
    } else {
        throw std::invalid_argument("unknown distribution kind '" + kind + "'");
    }
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream, std::uint64_t index) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : stream) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return splitmix64(splitmix64(seed ^ h) + index);
}

}  // namespace tokencake
