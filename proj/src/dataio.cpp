#include "stark/dataio.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "stark/rng.hpp"

namespace stark {
namespace {

// --- little-endian primitives -------------------------------------------
// Serialization is byte-by-byte so the formats do not depend on host
// endianness or struct layout.

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

void put_f64(std::string& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out += s;
}

class ByteReader {
 public:
  ByteReader(const std::string& data, std::string what)
      : data_(data), what_(std::move(what)) {}

  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    uint32_t n = u32();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  size_t pos() const { return pos_; }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(size_t n) {
    if (pos_ + n > data_.size())
      throw std::runtime_error(what_ + ": truncated file (needed " + std::to_string(n) +
                               " bytes at offset " + std::to_string(pos_) + ")");
  }
  const std::string& data_;
  std::string what_;
  size_t pos_ = 0;
};

std::string read_file(const std::string& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(what + ": cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& bytes,
                const std::string& what) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(what + ": cannot create " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error(what + ": write failed for " + path);
}

}  // namespace

// --- vocabulary ----------------------------------------------------------

GlossVocabulary::GlossVocabulary(std::vector<std::string> glosses)
    : glosses_(std::move(glosses)) {
  std::map<std::string, int> seen;
  for (size_t i = 0; i < glosses_.size(); ++i) {
    if (glosses_[i].empty())
      throw std::invalid_argument("vocabulary: empty gloss at line " + std::to_string(i + 1));
    auto [it, fresh] = seen.emplace(glosses_[i], static_cast<int>(i + 1));
    if (!fresh)
      throw std::invalid_argument("vocabulary: duplicate gloss '" + glosses_[i] + "'");
  }
}

int GlossVocabulary::encode(const std::string& gloss) const {
  for (size_t i = 0; i < glosses_.size(); ++i)
    if (glosses_[i] == gloss) return static_cast<int>(i + 1);
  throw std::invalid_argument("vocabulary: unknown gloss '" + gloss + "'");
}

const std::string& GlossVocabulary::decode(int id) const {
  if (id < 1 || id > size())
    throw std::out_of_range("vocabulary: id " + std::to_string(id) +
                            " outside [1, " + std::to_string(size()) + "]");
  return glosses_[static_cast<size_t>(id - 1)];
}

GlossVocabulary load_vocabulary(const std::string& path) {
  std::string text = read_file(path, "vocabulary");
  std::vector<std::string> glosses;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    glosses.push_back(line);
  }
  // A trailing newline yields one phantom empty line; drop it.
  if (!glosses.empty() && glosses.back().empty()) glosses.pop_back();
  return GlossVocabulary(std::move(glosses));
}

void save_vocabulary(const GlossVocabulary& vocab, const std::string& path) {
  std::string out;
  for (const auto& g : vocab.glosses()) {
    out += g;
    out += '\n';
  }
  write_file(path, out, "vocabulary");
}

// --- dataset -------------------------------------------------------------

static constexpr char kDatasetMagic[4] = {'S', 'K', 'D', 'S'};
static constexpr uint32_t kDatasetVersion = 1;

void save_dataset(const std::vector<KeypointSample>& samples, int points,
                  const std::string& layout_name, const std::string& path) {
  std::string out;
  out.append(kDatasetMagic, 4);
  put_u32(out, kDatasetVersion);
  put_u32(out, static_cast<uint32_t>(points));
  put_u32(out, 3);
  put_str(out, layout_name);
  put_u32(out, static_cast<uint32_t>(samples.size()));
  for (size_t i = 0; i < samples.size(); ++i) {
    const KeypointSample& s = samples[i];
    if (s.frames.rank() != 3 || s.frames.shape[1] != points || s.frames.shape[2] != 3 ||
        s.frames.shape[0] < 1)
      throw std::invalid_argument("dataset: sample " + std::to_string(i) + " ('" + s.id +
                                  "') has shape " + nd::shape_str(s.frames.shape) +
                                  ", expected [T>=1, " + std::to_string(points) + ", 3]");
    std::string rec;
    put_str(rec, s.id);
    put_u32(rec, static_cast<uint32_t>(s.frames.shape[0]));
    put_f64(rec, s.width);
    put_f64(rec, s.height);
    put_u32(rec, static_cast<uint32_t>(s.glosses.size()));
    for (int g : s.glosses) put_u32(rec, static_cast<uint32_t>(g));
    for (int64_t j = 0; j < s.frames.size(); ++j)
      put_f32(rec, static_cast<float>(s.frames[j]));
    put_u64(out, rec.size());
    out += rec;
  }
  write_file(path, out, "dataset");
}

std::vector<KeypointSample> load_dataset(const std::string& path, int expect_points) {
  std::string bytes = read_file(path, "dataset");
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kDatasetMagic, 4) != 0)
    throw std::runtime_error("dataset: " + path + " is not a dataset file (bad magic)");
  ByteReader rd(bytes, "dataset");
  rd.u32();  // magic
  uint32_t version = rd.u32();
  if (version != kDatasetVersion)
    throw std::runtime_error("dataset: unknown format version " + std::to_string(version));
  uint32_t points = rd.u32();
  uint32_t dims = rd.u32();
  if (dims != 3)
    throw std::runtime_error("dataset: coordinate dimension " + std::to_string(dims) +
                             " unsupported (expected 3)");
  rd.str();  // layout name (informational)
  uint32_t count = rd.u32();
  if (expect_points >= 0 && static_cast<int>(points) != expect_points)
    throw std::runtime_error("dataset: file has P=" + std::to_string(points) +
                             " but the layout expects P=" + std::to_string(expect_points));
  std::vector<KeypointSample> samples;
  samples.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    uint64_t rec_len;
    size_t rec_start;
    try {
      rec_len = rd.u64();
      rec_start = rd.pos();
      KeypointSample s;
      s.id = rd.str();
      uint32_t T = rd.u32();
      if (T < 1) throw std::runtime_error("frame count 0");
      s.width = rd.f64();
      s.height = rd.f64();
      if (!(s.width > 0) || !(s.height > 0))
        throw std::runtime_error("non-positive frame dimensions");
      uint32_t L = rd.u32();
      s.glosses.resize(L);
      for (uint32_t j = 0; j < L; ++j) s.glosses[j] = static_cast<int>(rd.u32());
      s.frames = nd::Array({static_cast<int>(T), static_cast<int>(points), 3});
      for (int64_t j = 0; j < s.frames.size(); ++j) s.frames[j] = rd.f32();
      if (rd.pos() - rec_start != rec_len)
        throw std::runtime_error("record length mismatch (header says " +
                                 std::to_string(rec_len) + ", parsed " +
                                 std::to_string(rd.pos() - rec_start) + ")");
      samples.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw std::runtime_error("dataset: malformed record " + std::to_string(i) + ": " +
                               e.what());
    }
  }
  if (!rd.done())
    throw std::runtime_error("dataset: trailing bytes after the last record");
  return samples;
}

// --- synthetic corpus ----------------------------------------------------

void SynthSpec::validate() const {
  if (vocab_size < 2) throw std::invalid_argument("synth: vocab_size must be >= 2");
  if (train_samples < 0 || dev_samples < 0)
    throw std::invalid_argument("synth: sample counts must be >= 0");
  if (min_glosses < 1 || min_glosses > max_glosses)
    throw std::invalid_argument("synth: gloss range must satisfy 1 <= min <= max");
  if (min_frames < 1 || min_frames > max_frames)
    throw std::invalid_argument("synth: frame range must satisfy 1 <= min <= max");
  if (noise < 0) throw std::invalid_argument("synth: noise must be >= 0");
  if (!(width > 0) || !(height > 0))
    throw std::invalid_argument("synth: frame dimensions must be positive");
  if (points < 1) throw std::invalid_argument("synth: points must be >= 1");
}

SynthSpec parse_synth_spec(const std::string& text) {
  SynthSpec s;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::string stripped;
    for (char ch : line)
      if (!std::isspace(static_cast<unsigned char>(ch))) stripped += ch;
    if (stripped.empty()) continue;
    auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("synth: line " + std::to_string(lineno) +
                                  " is not key=value");
    std::string key = stripped.substr(0, eq);
    std::string val = stripped.substr(eq + 1);
    auto as_int = [&] { return std::stoi(val); };
    auto as_dbl = [&] { return std::stod(val); };
    if (key == "vocab_size") s.vocab_size = as_int();
    else if (key == "train_samples") s.train_samples = as_int();
    else if (key == "dev_samples") s.dev_samples = as_int();
    else if (key == "min_glosses") s.min_glosses = as_int();
    else if (key == "max_glosses") s.max_glosses = as_int();
    else if (key == "min_frames") s.min_frames = as_int();
    else if (key == "max_frames") s.max_frames = as_int();
    else if (key == "noise") s.noise = as_dbl();
    else if (key == "seed") s.seed = std::stoull(val);
    else if (key == "width") s.width = as_dbl();
    else if (key == "height") s.height = as_dbl();
    else if (key == "points") s.points = as_int();
    else
      throw std::invalid_argument("synth: unknown key '" + key + "' on line " +
                                  std::to_string(lineno));
  }
  s.validate();
  return s;
}

SynthSpec load_synth_spec(const std::string& path) {
  return parse_synth_spec(read_file(path, "synth"));
}

namespace {

// Rounds through IEEE binary32, which is what the dataset container
// stores. The volatile blocks the optimizer from fusing the narrowing
// away (observed with GCC 11 at -O3 on vectorized stores); generation
// quantizes eagerly so in-memory and on-disk data agree bit-exactly.
double to_f32(double v) {
  volatile float f = static_cast<float>(v);
  return f;
}

// Per-gloss motion template: every keypoint follows a two-harmonic
// sinusoid around a shared rest pose over the gloss's unit time span.
// Templates are bandlimited on purpose — a temporal attention window
// several frames wide must be able to pick up the motion.
struct GlossTemplate {
  std::vector<double> amp1x, amp1y, amp2x, amp2y, phase1, phase2;
  double freq1 = 1, freq2 = 2;
};

GlossTemplate make_template(const SynthSpec& spec, int gloss_id) {
  GlossTemplate t;
  Rng rng = derived_rng({spec.seed, 0x7e3a91, static_cast<uint64_t>(gloss_id)});
  int P = spec.points;
  t.amp1x.resize(P); t.amp1y.resize(P);
  t.amp2x.resize(P); t.amp2y.resize(P);
  t.phase1.resize(P); t.phase2.resize(P);
  double scale = 0.12 * std::min(spec.width, spec.height);
  for (int p = 0; p < P; ++p) {
    t.amp1x[p] = rng.uniform(-scale, scale);
    t.amp1y[p] = rng.uniform(-scale, scale);
    t.amp2x[p] = rng.uniform(-scale * 0.5, scale * 0.5);
    t.amp2y[p] = rng.uniform(-scale * 0.5, scale * 0.5);
    t.phase1[p] = rng.uniform(0, 2 * M_PI);
    t.phase2[p] = rng.uniform(0, 2 * M_PI);
  }
  t.freq1 = rng.uniform(0.5, 1.5);
  t.freq2 = rng.uniform(1.5, 3.0);
  return t;
}

// Rest pose shared by all glosses so trajectories stay inside the frame.
void rest_pose(const SynthSpec& spec, std::vector<double>& rx, std::vector<double>& ry) {
  Rng rng = derived_rng({spec.seed, 0x52e57});
  int P = spec.points;
  rx.resize(P);
  ry.resize(P);
  for (int p = 0; p < P; ++p) {
    rx[p] = spec.width * rng.uniform(0.25, 0.75);
    ry[p] = spec.height * rng.uniform(0.25, 0.75);
  }
}

KeypointSample make_sample(const SynthSpec& spec,
                           const std::vector<GlossTemplate>& templates,
                           const std::vector<double>& rx, const std::vector<double>& ry,
                           const std::string& id, uint64_t split_tag, int index) {
  Rng rng = derived_rng({spec.seed, split_tag, static_cast<uint64_t>(index)});
  int n_glosses = rng.uniform_int(spec.min_glosses, spec.max_glosses);
  std::vector<int> glosses(static_cast<size_t>(n_glosses));
  for (int i = 0; i < n_glosses; ++i) {
    // Adjacent repeats are avoided: a repeated gloss needs an extra
    // blank-separated frame under CTC, which starves short sequences.
    int g = rng.uniform_int(1, spec.vocab_size);
    while (i > 0 && g == glosses[static_cast<size_t>(i - 1)] && spec.vocab_size > 1)
      g = rng.uniform_int(1, spec.vocab_size);
    glosses[static_cast<size_t>(i)] = g;
  }
  std::vector<int> frames_per(static_cast<size_t>(n_glosses));
  int T = 0;
  for (int i = 0; i < n_glosses; ++i) {
    frames_per[static_cast<size_t>(i)] = rng.uniform_int(spec.min_frames, spec.max_frames);
    T += frames_per[static_cast<size_t>(i)];
  }

  KeypointSample s;
  s.id = id;
  s.glosses = glosses;
  s.width = spec.width;
  s.height = spec.height;
  s.frames = nd::Array({T, spec.points, 3});
  int t0 = 0;
  for (int i = 0; i < n_glosses; ++i) {
    const GlossTemplate& tpl = templates[static_cast<size_t>(glosses[static_cast<size_t>(i)] - 1)];
    int Tg = frames_per[static_cast<size_t>(i)];
    for (int t = 0; t < Tg; ++t) {
      double u = Tg > 1 ? static_cast<double>(t) / (Tg - 1) : 0.0;
      for (int p = 0; p < spec.points; ++p) {
        double x = rx[static_cast<size_t>(p)] +
                   tpl.amp1x[static_cast<size_t>(p)] *
                       std::sin(2 * M_PI * (tpl.freq1 * u) + tpl.phase1[static_cast<size_t>(p)]) +
                   tpl.amp2x[static_cast<size_t>(p)] *
                       std::sin(2 * M_PI * (tpl.freq2 * u) + tpl.phase2[static_cast<size_t>(p)]);
        double y = ry[static_cast<size_t>(p)] +
                   tpl.amp1y[static_cast<size_t>(p)] *
                       std::cos(2 * M_PI * (tpl.freq1 * u) + tpl.phase1[static_cast<size_t>(p)]) +
                   tpl.amp2y[static_cast<size_t>(p)] *
                       std::cos(2 * M_PI * (tpl.freq2 * u) + tpl.phase2[static_cast<size_t>(p)]);
        if (spec.noise > 0) {
          x += spec.noise * rng.normal();
          y += spec.noise * rng.normal();
        }
        // Confidence is a deterministic function of the template so that
        // noise=0 with a fixed frame count reproduces a gloss bit-exactly.
        double conf = 0.85 + 0.075 * (1.0 + std::sin(2 * M_PI * tpl.freq1 * u +
                                                     tpl.phase1[static_cast<size_t>(p)]));
        int64_t base = (static_cast<int64_t>(t0 + t) * spec.points + p) * 3;
        s.frames[base + 0] = to_f32(x);
        s.frames[base + 1] = to_f32(y);
        s.frames[base + 2] = to_f32(conf);
      }
    }
    t0 += Tg;
  }
  return s;
}

}  // namespace

SynthResult synthesize_dataset(const SynthSpec& spec) {
  spec.validate();
  SynthResult out;

  std::vector<std::string> gloss_names;
  gloss_names.reserve(static_cast<size_t>(spec.vocab_size));
  for (int g = 1; g <= spec.vocab_size; ++g) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "G%03d", g);
    gloss_names.emplace_back(buf);
  }
  out.vocab = GlossVocabulary(std::move(gloss_names));

  std::vector<GlossTemplate> templates;
  templates.reserve(static_cast<size_t>(spec.vocab_size));
  for (int g = 1; g <= spec.vocab_size; ++g) templates.push_back(make_template(spec, g));
  std::vector<double> rx, ry;
  rest_pose(spec, rx, ry);

  out.train.reserve(static_cast<size_t>(spec.train_samples));
  for (int i = 0; i < spec.train_samples; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "train%04d", i);
    out.train.push_back(make_sample(spec, templates, rx, ry, id, 0x1aa1, i));
  }
  out.dev.reserve(static_cast<size_t>(spec.dev_samples));
  for (int i = 0; i < spec.dev_samples; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "dev%04d", i);
    out.dev.push_back(make_sample(spec, templates, rx, ry, id, 0x2bb2, i));
  }
  return out;
}

// --- checkpoint ----------------------------------------------------------

static constexpr char kCkptMagic[4] = {'S', 'K', 'C', 'P'};
static constexpr uint32_t kCkptVersion = 1;

void save_checkpoint(const CheckpointState& state, const std::string& path) {
  std::string out;
  out.append(kCkptMagic, 4);
  put_u32(out, kCkptVersion);
  put_u64(out, state.fingerprint);
  put_str(out, state.config_text);
  put_u64(out, static_cast<uint64_t>(state.epoch));
  put_u64(out, static_cast<uint64_t>(state.step));
  put_u64(out, state.seed);
  put_f64(out, state.best_dev_wer);
  put_u32(out, static_cast<uint32_t>(state.arrays.size()));
  for (const CheckpointArray& a : state.arrays) {
    put_str(out, a.name);
    put_u32(out, static_cast<uint32_t>(a.kind) | (static_cast<uint32_t>(a.value.rank()) << 8));
    for (int d : a.value.shape) put_u32(out, static_cast<uint32_t>(d));
    for (int64_t i = 0; i < a.value.size(); ++i) put_f64(out, a.value[i]);
  }
  write_file(path, out, "checkpoint");
}

CheckpointState load_checkpoint(const std::string& path, uint64_t expect_fingerprint) {
  std::string bytes = read_file(path, "checkpoint");
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCkptMagic, 4) != 0)
    throw std::runtime_error("checkpoint: " + path + " is not a checkpoint file (bad magic)");
  ByteReader rd(bytes, "checkpoint");
  rd.u32();  // magic
  uint32_t version = rd.u32();
  if (version != kCkptVersion)
    throw std::runtime_error("checkpoint: unknown format version " + std::to_string(version));
  CheckpointState state;
  state.fingerprint = rd.u64();
  if (expect_fingerprint != 0 && state.fingerprint != expect_fingerprint)
    throw std::runtime_error(
        "checkpoint: architecture fingerprint mismatch (file was written by a model with a "
        "different architecture, layout, or vocabulary)");
  state.config_text = rd.str();
  state.epoch = static_cast<int64_t>(rd.u64());
  state.step = static_cast<int64_t>(rd.u64());
  state.seed = rd.u64();
  state.best_dev_wer = rd.f64();
  uint32_t count = rd.u32();
  state.arrays.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    CheckpointArray a;
    a.name = rd.str();
    uint32_t kind_and_rank = rd.u32();
    a.kind = static_cast<CheckpointArray::Kind>(kind_and_rank & 0xff);
    uint32_t rank = (kind_and_rank >> 8);
    nd::Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(rd.u32());
    a.value = nd::Array(shape);
    for (int64_t j = 0; j < a.value.size(); ++j) a.value[j] = rd.f64();
    state.arrays.push_back(std::move(a));
  }
  if (!rd.done()) throw std::runtime_error("checkpoint: trailing bytes after the last array");
  return state;
}

}  // namespace stark
