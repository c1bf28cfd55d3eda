#include "stark/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace stark {
namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

int parse_int(const std::string& key, const std::string& v) {
  size_t pos = 0;
  int out;
  try {
    out = std::stoi(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad integer for " + key + ": '" + v + "'");
  }
  if (pos != v.size())
    throw std::invalid_argument("config: bad integer for " + key + ": '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  size_t pos = 0;
  double out;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad number for " + key + ": '" + v + "'");
  }
  if (pos != v.size())
    throw std::invalid_argument("config: bad number for " + key + ": '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: bad bool for " + key + ": '" + v + "'");
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  size_t pos = 0;
  unsigned long long out;
  try {
    out = std::stoull(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad seed for " + key + ": '" + v + "'");
  }
  if (pos != v.size())
    throw std::invalid_argument("config: bad seed for " + key + ": '" + v + "'");
  return out;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty())
      throw std::invalid_argument("config: empty list entry for " + key);
    out.push_back(parse_int(key, item));
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void ModelConfig::validate() const {
  if (input_channels != 3)
    throw std::invalid_argument("config: input_channels must be 3 (x, y, confidence)");
  if (stem_channels < 2 || stem_channels % 2 != 0)
    throw std::invalid_argument("config: stem_channels must be a positive even number");
  for (int c : module_channels)
    if (c < 1) throw std::invalid_argument("config: module channel widths must be positive");
  if (heads < 1) throw std::invalid_argument("config: heads must be >= 1");
  if (head_dim < 1) throw std::invalid_argument("config: head_dim must be >= 1");
  if (kernel < 1 || kernel % 2 == 0)
    throw std::invalid_argument("config: kernel must be odd and >= 1");
  if (ffn_expansion < 1) throw std::invalid_argument("config: ffn_expansion must be >= 1");
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0))
    throw std::invalid_argument("config: leaky_slope must lie in (0, 1)");
  if (decoder_hidden < 2 || decoder_hidden % 2 != 0)
    throw std::invalid_argument("config: decoder_hidden must be a positive even number");
  if (decoder_ffn < 1) throw std::invalid_argument("config: decoder_ffn must be >= 1");
  if (layout.empty()) throw std::invalid_argument("config: layout must be set");
}

void AugmentConfig::validate() const {
  if (!(speed_min >= 0.5 && speed_max <= 1.5 && speed_min <= speed_max))
    throw std::invalid_argument("config: speed range must satisfy 0.5 <= min <= max <= 1.5");
  if (!(rotate_deg >= 0.0 && rotate_deg <= 15.0))
    throw std::invalid_argument("config: rotate_deg must lie in [0, 15]");
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("config: lr must be positive");
  if (weight_decay < 0.0) throw std::invalid_argument("config: weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("config: betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw std::invalid_argument("config: adam_eps must be positive");
  if (t_max < 1) throw std::invalid_argument("config: t_max must be >= 1");
  if (eta_min < 0.0) throw std::invalid_argument("config: eta_min must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (epochs < 0) throw std::invalid_argument("config: epochs must be >= 0");
  if (lambda < 0.0) throw std::invalid_argument("config: lambda must be >= 0");
  if (!(tau > 0.0)) throw std::invalid_argument("config: tau must be positive");
}

void Config::validate() const {
  model.validate();
  train.validate();
  augment.validate();
}

Config parse_config(const std::string& text) {
  Config c;
  c.text = text;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  " is not key=value: '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument("config: empty key on line " + std::to_string(lineno));

    if (key == "stem_channels") c.model.stem_channels = parse_int(key, val);
    else if (key == "module_channels") c.model.module_channels = parse_int_list(key, val);
    else if (key == "heads") c.model.heads = parse_int(key, val);
    else if (key == "head_dim") c.model.head_dim = parse_int(key, val);
    else if (key == "kernel") c.model.kernel = parse_int(key, val);
    else if (key == "ffn_expansion") c.model.ffn_expansion = parse_int(key, val);
    else if (key == "leaky_slope") c.model.leaky_slope = parse_double(key, val);
    else if (key == "decoder_hidden") c.model.decoder_hidden = parse_int(key, val);
    else if (key == "decoder_ffn") c.model.decoder_ffn = parse_int(key, val);
    else if (key == "layout") c.model.layout = val;
    else if (key == "lr") c.train.lr = parse_double(key, val);
    else if (key == "weight_decay") c.train.weight_decay = parse_double(key, val);
    else if (key == "decoupled_wd") c.train.decoupled_wd = parse_bool(key, val);
    else if (key == "beta1") c.train.beta1 = parse_double(key, val);
    else if (key == "beta2") c.train.beta2 = parse_double(key, val);
    else if (key == "adam_eps") c.train.adam_eps = parse_double(key, val);
    else if (key == "t_max") c.train.t_max = parse_int(key, val);
    else if (key == "eta_min") c.train.eta_min = parse_double(key, val);
    else if (key == "batch_size") c.train.batch_size = parse_int(key, val);
    else if (key == "epochs") c.train.epochs = parse_int(key, val);
    else if (key == "seed") c.train.seed = parse_u64(key, val);
    else if (key == "lambda") c.train.lambda = parse_double(key, val);
    else if (key == "tau") c.train.tau = parse_double(key, val);
    else if (key == "kl_teacher_to_student") c.train.kl_teacher_to_student = parse_bool(key, val);
    else if (key == "speed_min") c.augment.speed_min = parse_double(key, val);
    else if (key == "speed_max") c.augment.speed_max = parse_double(key, val);
    else if (key == "rotate_deg") c.augment.rotate_deg = parse_double(key, val);
    else if (key == "augment_speed") c.augment.augment_speed = parse_bool(key, val);
    else if (key == "augment_rotate") c.augment.augment_rotate = parse_bool(key, val);
    else
      throw std::invalid_argument("config: unknown key '" + key + "' on line " +
                                  std::to_string(lineno));
  }
  c.validate();
  return c;
}

Config load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string format_config(const Config& c) {
  std::ostringstream out;
  out << "stem_channels = " << c.model.stem_channels << "\n";
  out << "module_channels = ";
  for (size_t i = 0; i < c.model.module_channels.size(); ++i)
    out << (i ? "," : "") << c.model.module_channels[i];
  out << "\n";
  out << "heads = " << c.model.heads << "\n";
  out << "head_dim = " << c.model.head_dim << "\n";
  out << "kernel = " << c.model.kernel << "\n";
  out << "ffn_expansion = " << c.model.ffn_expansion << "\n";
  out << "leaky_slope = " << fmt_double(c.model.leaky_slope) << "\n";
  out << "decoder_hidden = " << c.model.decoder_hidden << "\n";
  out << "decoder_ffn = " << c.model.decoder_ffn << "\n";
  out << "layout = " << c.model.layout << "\n";
  out << "lr = " << fmt_double(c.train.lr) << "\n";
  out << "weight_decay = " << fmt_double(c.train.weight_decay) << "\n";
  out << "decoupled_wd = " << (c.train.decoupled_wd ? "true" : "false") << "\n";
  out << "beta1 = " << fmt_double(c.train.beta1) << "\n";
  out << "beta2 = " << fmt_double(c.train.beta2) << "\n";
  out << "adam_eps = " << fmt_double(c.train.adam_eps) << "\n";
  out << "t_max = " << c.train.t_max << "\n";
  out << "eta_min = " << fmt_double(c.train.eta_min) << "\n";
  out << "batch_size = " << c.train.batch_size << "\n";
  out << "epochs = " << c.train.epochs << "\n";
  out << "seed = " << c.train.seed << "\n";
  out << "lambda = " << fmt_double(c.train.lambda) << "\n";
  out << "tau = " << fmt_double(c.train.tau) << "\n";
  out << "kl_teacher_to_student = " << (c.train.kl_teacher_to_student ? "true" : "false") << "\n";
  out << "speed_min = " << fmt_double(c.augment.speed_min) << "\n";
  out << "speed_max = " << fmt_double(c.augment.speed_max) << "\n";
  out << "rotate_deg = " << fmt_double(c.augment.rotate_deg) << "\n";
  out << "augment_speed = " << (c.augment.augment_speed ? "true" : "false") << "\n";
  out << "augment_rotate = " << (c.augment.augment_rotate ? "true" : "false") << "\n";
  return out.str();
}

}  // namespace stark
