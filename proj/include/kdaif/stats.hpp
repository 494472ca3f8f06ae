#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace kdaif {

double mean(std::span<const double> v);
// Population standard deviation (divides by n).
double population_std(std::span<const double> v);
// 1-based ranks; ties receive the average of their positions.
std::vector<double> ranks(std::span<const double> v);
double pearson(std::span<const double> a, std::span<const double> b);
double spearman(std::span<const double> a, std::span<const double> b);

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Each index is visited
// exactly once; fn must not touch state shared with other indices.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

// --jobs default: KDAIF_JOBS when set and positive, else 1.
std::size_t default_jobs();

}  // namespace kdaif
