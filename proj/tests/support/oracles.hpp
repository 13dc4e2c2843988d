#pragma once

// Independent reference implementations used as test oracles. They share no
// code with the library beyond its data types.

#include <cstdint>
#include <vector>

#include "superbloom/hashing.hpp"
#include "superbloom/inference.hpp"
#include "superbloom/transformer.hpp"

namespace oracle {

using superbloom::EntityId;

// Final hidden rows of the transformer, computed with plain loops and one
// attention head at a time.
std::vector<std::vector<double>> forward_hidden(const superbloom::Model<double>& model,
                                                const superbloom::BloomDigest& digest);

// Per-function softmax distributions at one entity position, function-major.
std::vector<double> position_probs(const superbloom::Model<double>& model,
                                   const std::vector<std::vector<double>>& hidden,
                                   std::uint32_t position);

// Number of unordered entity pairs agreeing on every function (pair scan).
std::size_t complete_collisions(const superbloom::HashScheme& scheme);

// Brute-force check that an exact result is the true top-k: items carry their
// true scores, and no unreturned id ranks before the last returned one.
// Results flagged approximate pass vacuously.
bool certificate_check(const superbloom::RankedResult& result,
                       const superbloom::PositionPrediction& prediction,
                       const superbloom::HashScheme& scheme,
                       const superbloom::ScoreFunction& score);

// Random prediction whose per-function distributions are softmax(temperature * z).
superbloom::PositionPrediction random_prediction(const superbloom::HashScheme& scheme,
                                                 double temperature, std::uint64_t seed);

}  // namespace oracle
