#include "stark/layout.hpp"

#include <cctype>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace stark {

void StreamLayout::validate() const {
  if (points < 1) throw std::invalid_argument("layout: points must be >= 1");
  std::set<int> seen;
  for (int s = 0; s < 4; ++s) {
    for (int idx : stream(s)) {
      if (idx < 0 || idx >= points)
        throw std::invalid_argument("layout: index " + std::to_string(idx) +
                                    " out of range [0, " + std::to_string(points) +
                                    ") in stream " + stream_name(s));
      if (!seen.insert(idx).second)
        throw std::invalid_argument("layout: index " + std::to_string(idx) +
                                    " appears in more than one stream");
    }
  }
}

const std::vector<int>& StreamLayout::stream(int i) const {
  switch (i) {
    case 0: return body;
    case 1: return left;
    case 2: return right;
    case 3: return face;
  }
  throw std::out_of_range("layout: stream index must be 0..3");
}

const char* StreamLayout::stream_name(int i) {
  static const char* names[4] = {"body", "left", "right", "face"};
  if (i < 0 || i > 3) throw std::out_of_range("layout: stream index must be 0..3");
  return names[i];
}

StreamLayout paper79_layout() {
  StreamLayout l;
  l.name = "paper79";
  l.points = 79;
  // 0..10: nose, eyes, ears, shoulders, elbows, wrists (left/right pairs).
  // Torso-centric points form the body stream; each arm's eye/elbow/wrist
  // joins its hand so a stream sees the whole articulated chain.
  l.body = {0, 3, 4, 5, 6};      // nose, ears, shoulders
  l.left = {1, 7, 9};            // left eye, elbow, wrist
  for (int i = 11; i < 32; ++i) l.left.push_back(i);   // 21 left-hand points
  l.right = {2, 8, 10};          // right eye, elbow, wrist
  for (int i = 32; i < 53; ++i) l.right.push_back(i);  // 21 right-hand points
  for (int i = 53; i < 79; ++i) l.face.push_back(i);   // 26 face points
  l.validate();
  return l;
}

StreamLayout parse_layout(const std::string& text, const std::string& name) {
  StreamLayout l;
  l.name = name;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  std::set<std::string> seen_keys;
  while (std::getline(ss, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    bool blank = true;
    for (char ch : line)
      if (!std::isspace(static_cast<unsigned char>(ch))) { blank = false; break; }
    if (blank) continue;
    auto colon = line.find(':');
    if (colon == std::string::npos)
      throw std::invalid_argument("layout: line " + std::to_string(lineno) +
                                  " is not 'key: values'");
    std::string key;
    for (char ch : line.substr(0, colon))
      if (!std::isspace(static_cast<unsigned char>(ch))) key += ch;
    if (!seen_keys.insert(key).second)
      throw std::invalid_argument("layout: duplicate section '" + key + "'");
    std::stringstream vals(line.substr(colon + 1));
    if (key == "points") {
      if (!(vals >> l.points))
        throw std::invalid_argument("layout: bad points value on line " +
                                    std::to_string(lineno));
    } else if (key == "body" || key == "left" || key == "right" || key == "face") {
      std::vector<int>& target = key == "body" ? l.body
                               : key == "left" ? l.left
                               : key == "right" ? l.right
                                                : l.face;
      int idx;
      while (vals >> idx) target.push_back(idx);
      if (!vals.eof())
        throw std::invalid_argument("layout: bad index on line " + std::to_string(lineno));
    } else {
      throw std::invalid_argument("layout: unknown section '" + key + "'");
    }
  }
  if (!seen_keys.count("points"))
    throw std::invalid_argument("layout: missing 'points:' line");
  l.validate();
  return l;
}

StreamLayout load_layout(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("layout: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  auto slash = path.find_last_of("/\\");
  std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
  auto dot = base.find_last_of('.');
  if (dot != std::string::npos) base = base.substr(0, dot);
  return parse_layout(buf.str(), base);
}

std::string format_layout(const StreamLayout& layout) {
  std::ostringstream out;
  out << "points: " << layout.points << "\n";
  for (int s = 0; s < 4; ++s) {
    out << StreamLayout::stream_name(s) << ":";
    for (int idx : layout.stream(s)) out << " " << idx;
    out << "\n";
  }
  return out.str();
}

StreamLayout resolve_layout(const std::string& name_or_path) {
  if (name_or_path == "paper79") return paper79_layout();
  return load_layout(name_or_path);
}

}  // namespace stark
