#pragma once

#include <cstddef>
#include <string>

#include "roarbench/attribution.hpp"

namespace roarbench {

enum class PostprocKind { Plain, Gaussian, MaxPool };

std::string to_string(PostprocKind k);
PostprocKind parse_postproc_kind(const std::string& name);  // plain | gaussian | maxpool

struct PostprocSpec {
  PostprocKind kind = PostprocKind::Plain;
  double sigma = 1.0;
  int kernel = 3;
  double truncate = 4.0;

  void validate() const;
};

// Filters a 2-D map. Uses the map values only.
AttributionMap apply(const PostprocSpec& spec, const AttributionMap& a);

// (C, H, W) -> (H, W) by summing channels; 2-D maps pass through.
AttributionMap reduce_channels(const AttributionMap& a);

// Nearest neighbour: out[i][j] = a[floor(i*h/H)][floor(j*w/W)].
AttributionMap upsample_nearest(const AttributionMap& a, std::size_t height, std::size_t width);

// reduce -> filter -> upsample to (height, width). The order matters for
// Grad-CAM, which is filtered at its native resolution.
AttributionMap postprocess(const PostprocSpec& spec, const AttributionMap& a, std::size_t height,
                           std::size_t width);

}  // namespace roarbench
