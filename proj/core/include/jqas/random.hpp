#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace jqas {

using Rng = std::mt19937_64;

// Distribution objects are created per call so that the engine state alone
// determines every future draw (checkpoints only need the engine).

double uniform01(Rng& rng);
bool bernoulli(Rng& rng, double p);
double normal(Rng& rng, double mean, double stddev);

std::string rng_state(const Rng& rng);
Rng rng_from_state(const std::string& state);

}  // namespace jqas
