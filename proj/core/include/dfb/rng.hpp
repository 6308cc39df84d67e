#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace dfb {

using Rng = std::mt19937_64;

// Mixes a base seed with a list of tags into an independent child seed
// (splitmix64 finalizer applied per tag).
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags);

// FNV-1a, for turning names into seed tags.
std::uint64_t tag_of(std::string_view name);

}  // namespace dfb
