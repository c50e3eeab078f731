#include "rosd/box.hpp"

#include <algorithm>
#include <cstdio>

namespace rosd {

double Box::area() const { return std::max(0.0, width()) * std::max(0.0, height()); }

bool Box::contains(const Box& other) const {
  return xmin <= other.xmin && ymin <= other.ymin && xmax >= other.xmax && ymax >= other.ymax;
}

bool is_valid(const Box& box, ImageSize image) {
  return box.xmin >= 0.0 && box.ymin >= 0.0 && box.xmin < box.xmax && box.ymin < box.ymax &&
         box.xmax <= static_cast<double>(image.width) && box.ymax <= static_cast<double>(image.height);
}

Box clamp_to_image(const Box& box, ImageSize image) {
  const auto w = static_cast<double>(image.width);
  const auto h = static_cast<double>(image.height);
  return Box{std::clamp(box.xmin, 0.0, w), std::clamp(box.ymin, 0.0, h), std::clamp(box.xmax, 0.0, w),
             std::clamp(box.ymax, 0.0, h)};
}

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin);
  const double ih = std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::string to_string(const Box& box) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "[%.2f, %.2f, %.2f, %.2f]", box.xmin, box.ymin, box.xmax, box.ymax);
  return buf;
}

}  // namespace rosd
