#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "ddtrl/tree.hpp"

namespace ddtrl {

inline constexpr std::size_t kDigitSide = 28;
inline constexpr std::size_t kDigitPixels = kDigitSide * kDigitSide;

// 28x28 grayscale images grouped by digit label, intensities in [0, 1].
struct DigitPool {
  enum class Source { MnistIdx, Synthetic };

  Source source = Source::Synthetic;
  std::array<std::vector<ObservationRef>, 10> images;

  std::size_t count(int digit) const { return images.at(static_cast<std::size_t>(digit)).size(); }
  std::size_t total() const;
  const ObservationRef& image(int digit, std::size_t index) const {
    return images.at(static_cast<std::size_t>(digit)).at(index);
  }
};

std::string to_string(DigitPool::Source source);

}  // namespace ddtrl
