#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace cascade {

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

std::string read_file(const std::filesystem::path& path);

/// Writes `content` to `path`, creating parent directories.
void write_file(const std::filesystem::path& path, std::string_view content);

/// Counter-based uniform generator. Every draw is a pure function of
/// (seed, stream tag, key, counter), so draws for one example never depend on
/// how many other examples were processed before it or on which thread.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t bits(std::string_view stream, std::string_view key, std::uint64_t counter = 0) const;

    /// Uniform double in [0, 1).
    double uniform(std::string_view stream, std::string_view key, std::uint64_t counter = 0) const;

    std::uint64_t seed() const noexcept { return seed_; }

private:
    std::uint64_t seed_;
};

std::uint64_t fnv1a64(std::string_view data) noexcept;
std::uint64_t splitmix64(std::uint64_t x) noexcept;

}  // namespace cascade
