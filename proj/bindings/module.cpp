// Python bindings for the keypoint sign-recognition core: losses,
// decoding, metrics, synthesis, dataset/checkpoint I/O, the model
// forward pass, and the finite-difference gradient checker.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "stark/config.hpp"
#include "stark/dataio.hpp"
#include "stark/decode.hpp"
#include "stark/decoder.hpp"
#include "stark/encoder.hpp"
#include "stark/gradcheck.hpp"
#include "stark/layout.hpp"
#include "stark/model.hpp"
#include "stark/objective.hpp"
#include "stark/prep.hpp"
#include "stark/rng.hpp"
#include "stark/trainkit.hpp"

namespace py = pybind11;
using namespace stark;
using nd::Array;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(const DoubleArray& a) {
  nd::Shape shape;
  shape.reserve(static_cast<size_t>(a.ndim()));
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape.push_back(static_cast<int>(a.shape(i)));
  Array out(std::move(shape));
  std::memcpy(out.ptr(), a.data(), static_cast<size_t>(out.size()) * sizeof(double));
  return out;
}

py::array_t<double> to_numpy(const Array& a) {
  std::vector<py::ssize_t> shape(a.shape.begin(), a.shape.end());
  py::array_t<double> out(shape);
  std::memcpy(out.mutable_data(), a.ptr(), static_cast<size_t>(a.size()) * sizeof(double));
  return out;
}

std::vector<nd::Var> to_constants(const std::vector<DoubleArray>& arrays) {
  std::vector<nd::Var> vars;
  vars.reserve(arrays.size());
  for (const DoubleArray& a : arrays) vars.push_back(nd::constant(to_array(a)));
  return vars;
}

py::dict sample_to_dict(const KeypointSample& s) {
  py::dict d;
  d["id"] = s.id;
  d["frames"] = to_numpy(s.frames);
  d["glosses"] = s.glosses;
  d["width"] = s.width;
  d["height"] = s.height;
  return d;
}

KeypointSample sample_from_dict(const py::dict& d) {
  KeypointSample s;
  s.id = py::cast<std::string>(d["id"]);
  s.frames = to_array(py::cast<DoubleArray>(d["frames"]));
  s.glosses = py::cast<std::vector<int>>(d["glosses"]);
  s.width = py::cast<double>(d["width"]);
  s.height = py::cast<double>(d["height"]);
  return s;
}

// Thin model wrapper owning the parsed config alongside the parameters.
class PyModel {
 public:
  PyModel(const std::string& config_text, int vocab_size)
      : cfg_(parse_config(config_text)),
        model_(cfg_.model, resolve_layout(cfg_.model.layout), vocab_size) {}

  void init_params(uint64_t seed) { model_.init_params(seed); }

  py::dict forward(const DoubleArray& frames, bool training) {
    nd::Tape tape;
    BoundModel bm = model_.bind(tape);
    std::array<nd::Var, 4> logits = model_.forward(bm, to_array(frames), training);
    static const char* names[4] = {"fuse", "left", "right", "body"};
    py::dict out;
    for (int h = 0; h < 4; ++h) out[names[h]] = to_numpy(logits[h].v);
    return out;
  }

  py::tuple decode(const py::dict& sample, int beam_width) {
    KeypointSample s = sample_from_dict(sample);
    Rng rng(0);  // eval-mode prep draws nothing
    KeypointSample prepped = prepare_sample(s, cfg_.augment, /*augment=*/false, rng);
    nd::Tape tape;
    BoundModel bm = model_.bind(tape);
    std::array<nd::Var, 4> logits = model_.forward(bm, prepped.frames, /*training=*/false);
    std::vector<Array> raw;
    for (const nd::Var& v : logits) raw.push_back(v.v);
    Array probs = ensemble_probs(raw);
    Hypothesis hyp = beam_width <= 1 ? greedy_decode(probs) : beam_decode(probs, beam_width);
    return py::make_tuple(hyp.glosses, hyp.log_score);
  }

  void save(const std::string& path, uint64_t seed) {
    CheckpointState state = model_.to_checkpoint(cfg_.text, 0, 0, seed, -1.0);
    save_checkpoint(state, path);
  }

  static std::unique_ptr<PyModel> load(const std::string& path) {
    CheckpointState state = load_checkpoint(path);
    int vocab_size = -1;
    for (const CheckpointArray& a : state.arrays)
      if (a.kind == CheckpointArray::param && a.name == "head.fuse.b_cls")
        vocab_size = a.value.shape[0] - 1;
    if (vocab_size < 1) throw std::invalid_argument("checkpoint: no classifier bias found");
    auto m = std::make_unique<PyModel>(state.config_text, vocab_size);
    m->model_.restore(state);
    return m;
  }

  uint64_t fingerprint() const { return model_.fingerprint(); }
  int64_t parameter_count() const { return model_.trainable_parameter_count(); }
  int vocab_size() const { return model_.vocab_size(); }
  std::string config_text() const { return cfg_.text; }

  const StarkModel& model() const { return model_; }
  StarkModel& mutable_model() { return model_; }
  const Config& cfg() const { return cfg_; }

 private:
  Config cfg_;
  StarkModel model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Keypoint-based continuous sign-language recognition core";

  // Too-short inputs for a CTC target are a data condition callers may
  // want to catch separately from genuine argument errors.
  py::register_exception<InfeasibleTarget>(m, "InfeasibleTargetError");

  // --- objectives ------------------------------------------------------
  m.def(
      "ctc_loss",
      [](const DoubleArray& log_probs, const std::vector<int>& targets) {
        return ctc_loss(nd::constant(to_array(log_probs)), targets).v[0];
      },
      py::arg("log_probs"), py::arg("targets"),
      "CTC negative log-likelihood of `targets` under [T, V+1] per-frame log-probs.");
  m.def(
      "kl_distillation",
      [](const std::vector<DoubleArray>& stream_log_probs, double tau, bool teacher_to_student) {
        return kl_distillation(to_constants(stream_log_probs), tau, teacher_to_student).v[0];
      },
      py::arg("stream_log_probs"), py::arg("tau"), py::arg("teacher_to_student") = true,
      "Temperature-softened KL against the detached per-frame ensemble teacher.");
  m.def(
      "total_loss",
      [](const std::vector<DoubleArray>& stream_logits, const std::vector<int>& targets,
         double lambda, double tau, bool teacher_to_student) {
        LossBreakdown b =
            total_loss(to_constants(stream_logits), targets, lambda, tau, teacher_to_student);
        py::dict d;
        d["total"] = b.total_value;
        d["ctc"] = b.ctc;
        d["distillation"] = b.distillation;
        return d;
      },
      py::arg("stream_logits"), py::arg("targets"), py::arg("lambda_"), py::arg("tau"),
      py::arg("teacher_to_student") = true,
      "Sum of per-stream CTC losses plus lambda times the distillation term.");

  // --- decoding & metrics ----------------------------------------------
  m.def(
      "greedy_decode",
      [](const DoubleArray& log_probs) {
        Hypothesis h = greedy_decode(to_array(log_probs));
        return py::make_tuple(h.glosses, h.log_score);
      },
      py::arg("log_probs"), "Best-path decode: per-frame argmax, collapse repeats, drop blanks.");
  m.def(
      "beam_decode",
      [](const DoubleArray& log_probs, int width) {
        Hypothesis h = beam_decode(to_array(log_probs), width);
        return py::make_tuple(h.glosses, h.log_score);
      },
      py::arg("log_probs"), py::arg("width"), "CTC prefix beam search over [T, V+1] log-probs.");
  m.def(
      "ensemble_probs",
      [](const std::vector<DoubleArray>& stream_logits) {
        std::vector<Array> raw;
        raw.reserve(stream_logits.size());
        for (const DoubleArray& a : stream_logits) raw.push_back(to_array(a));
        return to_numpy(ensemble_probs(raw));
      },
      py::arg("stream_logits"), "Per-frame mean of stream softmax distributions, re-logged.");
  m.def("edit_distance", &edit_distance, py::arg("a"), py::arg("b"));
  m.def("wer", &wer, py::arg("reference"), py::arg("hypothesis"));
  m.def("corpus_wer", &corpus_wer, py::arg("ref_hyp_pairs"));

  // --- data ----------------------------------------------------------
  m.def(
      "synthesize",
      [](const std::string& spec_text) {
        SynthResult r = synthesize_dataset(parse_synth_spec(spec_text));
        py::list train, dev;
        for (const KeypointSample& s : r.train) train.append(sample_to_dict(s));
        for (const KeypointSample& s : r.dev) dev.append(sample_to_dict(s));
        py::dict d;
        d["train"] = train;
        d["dev"] = dev;
        d["vocab"] = r.vocab.glosses();
        return d;
      },
      py::arg("spec_text"), "Generate a synthetic corpus from key=value spec text.");
  m.def(
      "load_dataset",
      [](const std::string& path) {
        py::list out;
        for (const KeypointSample& s : load_dataset(path)) out.append(sample_to_dict(s));
        return out;
      },
      py::arg("path"));
  m.def(
      "save_dataset",
      [](const py::list& samples, int points, const std::string& layout_name,
         const std::string& path) {
        std::vector<KeypointSample> native;
        for (const auto& item : samples) native.push_back(sample_from_dict(py::cast<py::dict>(item)));
        save_dataset(native, points, layout_name, path);
      },
      py::arg("samples"), py::arg("points"), py::arg("layout_name"), py::arg("path"));
  m.def(
      "load_vocabulary",
      [](const std::string& path) { return load_vocabulary(path).glosses(); }, py::arg("path"));
  m.def(
      "normalize_coords",
      [](const py::dict& sample) { return sample_to_dict(normalize_coords(sample_from_dict(sample))); },
      py::arg("sample"), "Map pixel coordinates to [-1, 1]; confidences untouched.");

  // --- gradient checker -------------------------------------------------
  m.def("gradcheck_suites", &gradcheck::suite_names);
  m.def(
      "gradcheck",
      [](const std::string& op, uint64_t seed, int n_seeds) {
        py::list out;
        for (const gradcheck::CheckResult& r : gradcheck::run(op, seed, n_seeds)) {
          py::dict d;
          d["name"] = r.name;
          d["passed"] = r.pass;
          d["max_err"] = r.max_err;
          d["checked"] = r.checked;
          d["detail"] = r.detail;
          out.append(d);
        }
        return out;
      },
      py::arg("op") = "all", py::arg("seed") = 20260822ull, py::arg("n_seeds") = 5,
      "Run finite-difference gradient suites; returns one record per check.");

  // --- model ------------------------------------------------------------
  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&, int>(), py::arg("config_text"), py::arg("vocab_size"))
      .def("init_params", &PyModel::init_params, py::arg("seed"))
      .def("forward", &PyModel::forward, py::arg("frames"), py::arg("training") = false,
           "Four-stream forward over normalized [T, P, 3] frames; returns per-head logits.")
      .def("decode", &PyModel::decode, py::arg("sample"), py::arg("beam_width") = 5,
           "Eval-mode preprocessing + ensemble decode of a pixel-space sample dict.")
      .def("save", &PyModel::save, py::arg("path"), py::arg("seed") = 0)
      .def_static("load", &PyModel::load, py::arg("path"))
      .def_property_readonly("fingerprint", &PyModel::fingerprint)
      .def_property_readonly("parameter_count", &PyModel::parameter_count)
      .def_property_readonly("vocab_size", &PyModel::vocab_size)
      .def_property_readonly("config_text", &PyModel::config_text);

  // --- training / evaluation -------------------------------------------
  m.def(
      "train",
      [](PyModel& model, const py::list& train_set, const py::list& dev_set,
         const std::vector<std::string>& vocab, const std::string& out_dir) {
        std::vector<KeypointSample> tr, dv;
        for (const auto& s : train_set) tr.push_back(sample_from_dict(py::cast<py::dict>(s)));
        for (const auto& s : dev_set) dv.push_back(sample_from_dict(py::cast<py::dict>(s)));
        TrainResult r =
            train(model.cfg(), model.mutable_model(), tr, dv, GlossVocabulary(vocab), out_dir);
        py::dict d;
        d["log_lines"] = r.log_lines;
        d["best_dev_wer"] = r.best_dev_wer;
        d["final_dev_wer"] = r.final_dev_wer;
        d["steps"] = r.steps;
        d["epochs_run"] = r.epochs_run;
        d["skipped_samples"] = r.skipped_samples;
        return d;
      },
      py::arg("model"), py::arg("train_set"), py::arg("dev_set"), py::arg("vocab"),
      py::arg("out_dir"), "Full training loop; writes checkpoints and metrics.log to out_dir.");
  m.def(
      "evaluate",
      [](const PyModel& model, const py::list& data, const std::vector<std::string>& vocab,
         int beam_width) {
        std::vector<KeypointSample> native;
        for (const auto& s : data) native.push_back(sample_from_dict(py::cast<py::dict>(s)));
        EvalResult r = evaluate(model.model(), native, GlossVocabulary(vocab), beam_width);
        py::dict d;
        d["wer"] = r.wer;
        d["beam_width"] = r.beam_width;
        d["decode_lines"] = r.decode_lines;
        d["report"] = r.report;
        return d;
      },
      py::arg("model"), py::arg("data"), py::arg("vocab"), py::arg("beam_width") = 5);

  // --- accounting --------------------------------------------------------
  m.def(
      "count_parameters",
      [](const std::string& config_text) {
        Config cfg = parse_config(config_text);
        StreamLayout layout = resolve_layout(cfg.model.layout);
        py::dict d;
        int64_t total = 0;
        for (const StreamCount& sc : count_encoder_parameters(cfg.model, layout)) {
          py::dict s;
          s["stem"] = sc.stem;
          s["modules"] = sc.modules;
          s["total"] = sc.total();
          d[py::str(sc.stream)] = s;
          total += sc.total();
        }
        d["encoder_total"] = total;
        return d;
      },
      py::arg("config_text"), "Per-stream encoder parameter counts for a config.");
}
