#pragma once

#include <cstddef>
#include <string>

namespace rosd {

// Axis-aligned box in original-image pixel coordinates, [xmin, xmax) x [ymin, ymax).
struct Box {
  double xmin = 0.0;
  double ymin = 0.0;
  double xmax = 0.0;
  double ymax = 0.0;

  double width() const { return xmax - xmin; }
  double height() const { return ymax - ymin; }
  double area() const;
  bool contains(const Box& other) const;

  friend bool operator==(const Box&, const Box&) = default;
};

struct ImageSize {
  std::size_t width = 0;
  std::size_t height = 0;

  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

// True when the box has positive area and lies inside the image.
bool is_valid(const Box& box, ImageSize image);

Box clamp_to_image(const Box& box, ImageSize image);

// Intersection over union of two boxes; 0 when either is degenerate.
double iou(const Box& a, const Box& b);

std::string to_string(const Box& box);

}  // namespace rosd
