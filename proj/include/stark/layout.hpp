#pragma once

#include <string>
#include <vector>

// Assignment of keypoint indices to the four encoder streams. The four
// lists must be pairwise disjoint and lie in [0, points). A layout is
// fixed once a model is built: per-keypoint parameter shapes depend on
// the stream sizes, and the checkpoint fingerprint covers the layout.

namespace stark {

struct StreamLayout {
  std::string name;
  int points = 0;  // total keypoints per frame (P)
  std::vector<int> body, left, right, face;

  void validate() const;  // throws std::invalid_argument

  const std::vector<int>& stream(int i) const;  // 0=body 1=left 2=right 3=face
  static const char* stream_name(int i);
  int stream_points(int i) const { return static_cast<int>(stream(i).size()); }
};

// The default 79-keypoint layout: 11 upper-body points, 21 per hand,
// 26 face points. Wrist/elbow/eye points ride with their hand's stream;
// the union covers all 79 indices exactly once.
StreamLayout paper79_layout();

// Text format: "points: N" plus one "body:/left:/right:/face:" line each
// with whitespace-separated indices. '#' starts a comment.
StreamLayout parse_layout(const std::string& text, const std::string& name);
StreamLayout load_layout(const std::string& path);
std::string format_layout(const StreamLayout& layout);

// Resolves a config `layout` value: builtin name ("paper79") or a path.
StreamLayout resolve_layout(const std::string& name_or_path);

}  // namespace stark
