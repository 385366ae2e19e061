#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fallnet/data.hpp"
#include "fallnet/gradcheck.hpp"
#include "fallnet/layers.hpp"
#include "fallnet/loso.hpp"
#include "fallnet/metrics.hpp"
#include "fallnet/models.hpp"
#include "fallnet/optim.hpp"
#include "fallnet/serialize.hpp"

namespace py = pybind11;
using namespace fallnet;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor tensor_from(const DoubleArray& arr) {
    std::vector<size_t> shape(static_cast<size_t>(arr.ndim()));
    for (py::ssize_t i = 0; i < arr.ndim(); ++i) {
        shape[static_cast<size_t>(i)] = static_cast<size_t>(arr.shape(i));
    }
    const double* p = arr.data();
    std::vector<real> values(p, p + arr.size());
    return Tensor(std::move(shape), std::move(values));
}

py::array_t<double> array_from(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> arr(shape);
    double* p = arr.mutable_data();
    for (size_t i = 0; i < t.size(); ++i) {
        p[i] = static_cast<double>(t[i]);
    }
    return arr;
}

py::dict metrics_dict(const ConfusionCounts& c, const MetricSet& m) {
    py::dict d;
    d["tp"] = c.tp;
    d["fp"] = c.fp;
    d["fn"] = c.fn;
    d["tn"] = c.tn;
    d["accuracy"] = m.accuracy;
    d["recall"] = m.recall;
    d["precision"] = m.precision;
    d["f_score"] = m.f_score;
    d["degenerate"] = m.degenerate;
    return d;
}

ZooConfig zoo_from_kwargs(size_t rows, size_t cols, size_t conv_filters, size_t gru_hidden,
                          size_t dense_units, bool aux_heads, bool temporal_last_only) {
    ZooConfig z;
    z.input_rows = rows;
    z.input_cols = cols;
    z.conv_filters = conv_filters;
    z.gru_hidden = gru_hidden;
    z.dense_units = dense_units;
    z.aux_heads = aux_heads;
    z.temporal_last_only = temporal_last_only;
    return z;
}

std::vector<Segment> segments_from_arrays(const DoubleArray& x, const std::vector<size_t>& y,
                                          const std::vector<std::string>* subjects) {
    if (x.ndim() != 3) {
        throw std::invalid_argument("segments: expected a [n, channels, window] array");
    }
    size_t n = static_cast<size_t>(x.shape(0));
    size_t rows = static_cast<size_t>(x.shape(1));
    size_t cols = static_cast<size_t>(x.shape(2));
    if (y.size() != n || (subjects && subjects->size() != n)) {
        throw std::invalid_argument("segments: labels/subjects length mismatch");
    }
    std::vector<Segment> out(n);
    const double* p = x.data();
    for (size_t i = 0; i < n; ++i) {
        Tensor t({rows, cols});
        for (size_t j = 0; j < rows * cols; ++j) {
            t[j] = static_cast<real>(p[i * rows * cols + j]);
        }
        out[i].data = std::move(t);
        out[i].label = y[i];
        out[i].subject = subjects ? (*subjects)[i] : "X";
        out[i].source_id = "array_" + std::to_string(i);
        out[i].start = 0;
    }
    return out;
}

// Model handle for python: owns the C++ model plus the config needed to
// rebuild it from a weights file.
struct PyModel {
    std::unique_ptr<Model> model;
    ZooConfig zoo;
    uint64_t seed = 0;

    static PyModel build(const std::string& name, uint64_t seed, const ZooConfig& zoo) {
        std::optional<ModelKind> kind = model_kind_from_name(name);
        if (!kind) {
            throw std::invalid_argument("unknown model '" + name + "'");
        }
        PyModel pm;
        pm.zoo = zoo;
        pm.seed = seed;
        pm.model = build_model(*kind, zoo, SeededRng(seed).split("init"));
        return pm;
    }

    std::string kind_name() const { return model_kind_name(model->kind()); }

    py::array_t<double> predict_proba(const DoubleArray& seg) {
        return array_from(model->predict_proba(tensor_from(seg)));
    }

    size_t predict(const DoubleArray& seg) { return model->predict(tensor_from(seg)); }

    std::vector<double> fit(const DoubleArray& x, const std::vector<size_t>& y,
                            size_t epochs, size_t batch, double lr, double aux_weight,
                            uint64_t seed) {
        std::vector<Segment> segs = segments_from_arrays(x, y, nullptr);
        TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.batch_size = batch;
        cfg.adam.lr = static_cast<real>(lr);
        cfg.aux_weight = static_cast<real>(aux_weight);
        TrainHistory hist = train(*model, segs, cfg, SeededRng(seed).split("train"));
        return {hist.mean_loss.begin(), hist.mean_loss.end()};
    }

    void save(const std::string& path) {
        WeightsFile wf = snapshot_weights(
            *model, seed, weights_meta_json(model->kind(), zoo, false));
        write_weights_file(path, wf);
    }

    static PyModel load(const std::string& path) {
        WeightsFile wf = read_weights_file(path);
        WeightsMeta meta = parse_weights_meta(wf.meta);
        PyModel pm;
        pm.zoo = meta.zoo;
        pm.seed = wf.seed;
        pm.model = build_model(meta.kind, meta.zoo, SeededRng(wf.seed));
        restore_weights(*pm.model, wf);
        return pm;
    }

    size_t param_count() { return model->param_count(); }
};

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "fallnet core: from-scratch CNN/GRU fall detection";

    py::class_<SeededRng>(m, "SeededRng")
        .def(py::init<uint64_t>(), py::arg("seed"))
        .def("uniform", py::overload_cast<>(&SeededRng::uniform))
        .def("normal", &SeededRng::normal, py::arg("mean") = 0.0, py::arg("stddev") = 1.0)
        .def("below", &SeededRng::below, py::arg("n"))
        .def("split",
             [](const SeededRng& r, const std::string& tag) { return r.split(tag); },
             py::arg("tag"))
        .def_property_readonly("seed", &SeededRng::seed);

    m.def("matmul",
          [](const DoubleArray& a, const DoubleArray& b) {
              return array_from(matmul(tensor_from(a), tensor_from(b)));
          },
          py::arg("a"), py::arg("b"));
    m.def("relu",
          [](const DoubleArray& x) {
              return array_from(map_activation(Activation::Relu, tensor_from(x)));
          },
          py::arg("x"));
    m.def("sigmoid",
          [](const DoubleArray& x) {
              return array_from(map_activation(Activation::Sigmoid, tensor_from(x)));
          },
          py::arg("x"));
    m.def("tanh",
          [](const DoubleArray& x) {
              return array_from(map_activation(Activation::Tanh, tensor_from(x)));
          },
          py::arg("x"));
    m.def("softmax",
          [](const DoubleArray& logits) { return array_from(softmax(tensor_from(logits))); },
          py::arg("logits"));

    m.def("conv2d",
          [](const DoubleArray& x, const DoubleArray& filters, const DoubleArray& bias) {
              Tensor k = tensor_from(filters);
              if (k.rank() != 4) {
                  throw std::invalid_argument("conv2d: filters must be rank 4");
              }
              Conv2dLayer layer(k.dim(1), k.dim(0), k.dim(2), k.dim(3), SeededRng(0));
              layer.filters = std::move(k);
              layer.bias = tensor_from(bias);
              return array_from(layer.forward(tensor_from(x)));
          },
          py::arg("x"), py::arg("filters"), py::arg("bias"),
          "Valid cross-correlation, stride 1: x [ic,h,w] with filters [oc,ic,kh,kw]");
    m.def("maxpool2d",
          [](const DoubleArray& x, size_t ph, size_t pw) {
              MaxPool2dLayer layer(ph, pw);
              return array_from(layer.forward(tensor_from(x)));
          },
          py::arg("x"), py::arg("ph"), py::arg("pw"));
    m.def("gru_step",
          [](const DoubleArray& x, const DoubleArray& h_prev, const DoubleArray& w_r,
             const DoubleArray& w_z, const DoubleArray& w_h, const DoubleArray& b_r,
             const DoubleArray& b_z, const DoubleArray& b_h) {
              GruParams p;
              p.w_r = tensor_from(w_r);
              p.w_z = tensor_from(w_z);
              p.w_h = tensor_from(w_h);
              p.b_r = tensor_from(b_r);
              p.b_z = tensor_from(b_z);
              p.b_h = tensor_from(b_h);
              GruStep s = gru_cell_step(tensor_from(x), tensor_from(h_prev), p);
              py::dict d;
              d["r"] = array_from(s.r);
              d["z"] = array_from(s.z);
              d["hcand"] = array_from(s.hcand);
              d["h"] = array_from(s.h);
              return d;
          },
          py::arg("x"), py::arg("h_prev"), py::arg("w_r"), py::arg("w_z"), py::arg("w_h"),
          py::arg("b_r"), py::arg("b_z"), py::arg("b_h"),
          "One GRU cell update; weight matrices act on [h_prev, x]");

    m.def("resample_linear",
          [](const DoubleArray& samples, double src_hz, double dst_hz) {
              return array_from(resample_linear(tensor_from(samples), src_hz, dst_hz));
          },
          py::arg("samples"), py::arg("src_hz"), py::arg("dst_hz"));

    m.def("confusion",
          [](const std::vector<size_t>& predicted, const std::vector<size_t>& actual) {
              ConfusionCounts c = confusion(predicted, actual);
              return py::make_tuple(c.tp, c.fp, c.fn, c.tn);
          },
          py::arg("predicted"), py::arg("actual"));
    m.def("metrics",
          [](size_t tp, size_t fp, size_t fn, size_t tn) {
              ConfusionCounts c{tp, fp, fn, tn};
              return metrics_dict(c, compute_metrics(c));
          },
          py::arg("tp"), py::arg("fp"), py::arg("fn"), py::arg("tn"));

    m.def("gradcheck_suite",
          [](size_t seeds, double eps, uint64_t seed) {
              std::vector<py::tuple> out;
              for (const LayerCheck& c :
                   gradcheck_suite(seeds, static_cast<real>(eps), seed)) {
                  out.push_back(py::make_tuple(c.layer, c.max_rel_err, c.redraws));
              }
              return out;
          },
          py::arg("seeds") = 1, py::arg("eps") = 1e-5, py::arg("seed") = 42);

    m.def("synth_segments",
          [](size_t subjects, size_t adl, size_t falls, uint64_t seed) {
              SynthConfig cfg;
              cfg.n_subjects = subjects;
              cfg.adl_per_subject = adl;
              cfg.falls_per_subject = falls;
              std::vector<RawInstance> data = synth_dataset(cfg, SeededRng(seed));
              PipelineConfig pipe;
              std::vector<Segment> segs = preprocess(data, pipe);
              size_t n = segs.size();
              py::array_t<double> x({n, size_t(3), pipe.window});
              double* px = x.mutable_data();
              std::vector<size_t> y(n);
              std::vector<std::string> subj(n);
              for (size_t i = 0; i < n; ++i) {
                  for (size_t j = 0; j < segs[i].data.size(); ++j) {
                      px[i * 3 * pipe.window + j] = static_cast<double>(segs[i].data[j]);
                  }
                  y[i] = segs[i].label;
                  subj[i] = segs[i].subject;
              }
              return py::make_tuple(x, y, subj);
          },
          py::arg("subjects") = 5, py::arg("adl") = 8, py::arg("falls") = 4,
          py::arg("seed") = 42,
          "Synthesize, resample, and window a dataset; returns (x, labels, subject_ids)");

    m.def("loso_json",
          [](const std::string& model_name, const DoubleArray& x,
             const std::vector<size_t>& y, const std::vector<std::string>& subjects,
             size_t epochs, size_t batch, double lr, double aux_weight, uint64_t seed,
             size_t jobs) {
              std::optional<ModelKind> kind = model_kind_from_name(model_name);
              if (!kind) {
                  throw std::invalid_argument("unknown model '" + model_name + "'");
              }
              std::vector<Segment> segs = segments_from_arrays(x, y, &subjects);
              LosoOptions opt;
              opt.zoo.input_rows = static_cast<size_t>(x.shape(1));
              opt.zoo.input_cols = static_cast<size_t>(x.shape(2));
              opt.train.epochs = epochs;
              opt.train.batch_size = batch;
              opt.train.adam.lr = static_cast<real>(lr);
              opt.train.aux_weight = static_cast<real>(aux_weight);
              opt.jobs = jobs;
              return report_json(loso_run(*kind, segs, opt, SeededRng(seed)));
          },
          py::arg("model"), py::arg("x"), py::arg("y"), py::arg("subjects"),
          py::arg("epochs") = 40, py::arg("batch") = 32, py::arg("lr") = 0.01,
          py::arg("aux_weight") = 1.0, py::arg("seed") = 42, py::arg("jobs") = 1,
          "Leave-one-subject-out run; returns the report as a JSON string");

    py::class_<PyModel>(m, "Model")
        .def_static(
            "build",
            [](const std::string& name, uint64_t seed, size_t rows, size_t cols,
               size_t conv_filters, size_t gru_hidden, size_t dense_units, bool aux_heads,
               bool temporal_last_only) {
                return PyModel::build(name, seed,
                                      zoo_from_kwargs(rows, cols, conv_filters, gru_hidden,
                                                      dense_units, aux_heads,
                                                      temporal_last_only));
            },
            py::arg("name"), py::arg("seed") = 42, py::arg("rows") = 3,
            py::arg("cols") = 140, py::arg("conv_filters") = 32, py::arg("gru_hidden") = 64,
            py::arg("dense_units") = 64, py::arg("aux_heads") = true,
            py::arg("temporal_last_only") = false)
        .def_static("load", &PyModel::load, py::arg("path"))
        .def("predict_proba", &PyModel::predict_proba, py::arg("segment"))
        .def("predict", &PyModel::predict, py::arg("segment"))
        .def("fit", &PyModel::fit, py::arg("x"), py::arg("y"), py::arg("epochs") = 40,
             py::arg("batch") = 32, py::arg("lr") = 0.01, py::arg("aux_weight") = 1.0,
             py::arg("seed") = 42, "Returns the per-epoch mean loss history")
        .def("save", &PyModel::save, py::arg("path"))
        .def("param_count", &PyModel::param_count)
        .def_property_readonly("kind", &PyModel::kind_name);

    m.def("model_names", []() {
        std::vector<std::string> names;
        for (ModelKind k : all_model_kinds()) {
            names.push_back(model_kind_name(k));
        }
        return names;
    });
}
