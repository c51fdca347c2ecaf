#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "scot/combiner.hpp"
#include "scot/embedding_store.hpp"
#include "scot/loss.hpp"
#include "scot/retrieval.hpp"
#include "scot/tensor.hpp"

namespace py = pybind11;
using namespace scot;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

template <class T, class A>
Vec<T> to_vec(const A& a) {
  if (a.ndim() != 1) throw Error(ErrorKind::ShapeMismatch, "expected a 1-d array");
  return Vec<T>(std::vector<T>(a.data(), a.data() + a.shape(0)));
}

template <class T, class A>
Mat<T> to_mat(const A& a) {
  if (a.ndim() != 2) throw Error(ErrorKind::ShapeMismatch, "expected a 2-d array");
  return Mat<T>(a.shape(0), a.shape(1), std::vector<T>(a.data(), a.data() + a.size()));
}

template <class T>
py::array_t<T> from_vec(const Vec<T>& v) {
  py::array_t<T> out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(v.dim())});
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

template <class T>
py::array_t<T> from_mat(const Mat<T>& m) {
  py::array_t<T> out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(m.rows()), static_cast<py::ssize_t>(m.cols())});
  std::copy(m.data(), m.data() + m.size(), out.mutable_data());
  return out;
}

EmbeddingTable make_table(std::vector<std::string> ids, const F32Array& matrix, std::string source_tag) {
  return EmbeddingTable(std::move(ids), to_mat<float>(matrix), std::move(source_tag));
}

py::tuple table_tuple(const EmbeddingTable& t) {
  return py::make_tuple(t.ids(), from_mat(t.matrix()), t.source_tag());
}

}  // namespace

PYBIND11_MODULE(_scot, m) {
  m.doc() = "Composition network, contrastive loss and exact retrieval over frozen image/text embeddings.";

  static py::exception<Error> scot_error(m, "ScotError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = scot_error;
      py::object instance = exc(e.what());
      instance.attr("kind") = std::string(to_string(e.kind()));
      instance.attr("exit_code") = exit_code(e.kind());
      PyErr_SetObject(scot_error.ptr(), instance.ptr());
    }
  });

  m.def("l2_normalize", [](const F64Array& v) { return from_vec(l2_normalize(to_vec<double>(v))); }, py::arg("v"));
  m.def("logsumexp", [](const F64Array& v) { return logsumexp<double>(to_vec<double>(v).span()); }, py::arg("xs"));
  m.def(
      "cosine_matrix", [](const F64Array& a, const F64Array& b) { return from_mat(cosine_matrix(to_mat<double>(a), to_mat<double>(b))); },
      py::arg("a"), py::arg("b"));

  m.def(
      "total_loss",
      [](const F64Array& composed, const F64Array& targets, const F64Array& originals, double margin,
         double alpha_pos, double alpha_neg, bool exclude_diagonal) {
        LossConfig cfg;
        cfg.margin = margin;
        cfg.alpha_pos = alpha_pos;
        cfg.alpha_neg = alpha_neg;
        cfg.exclude_diagonal = exclude_diagonal;
        validate(cfg);
        const auto r = total_loss(to_mat<double>(composed), to_mat<double>(targets), to_mat<double>(originals), cfg);
        py::dict d;
        d["pos"] = r.pos;
        d["neg_prime"] = r.neg_prime;
        d["caption_neg"] = r.caption_neg;
        d["neg_doubleprime"] = r.neg_doubleprime;
        d["total"] = r.total;
        d["grad"] = from_mat(r.grad);
        return d;
      },
      py::arg("composed"), py::arg("targets"), py::arg("originals"), py::arg("margin") = 0.2,
      py::arg("alpha_pos") = 10.0, py::arg("alpha_neg") = 0.1, py::arg("exclude_diagonal") = false);
  m.def(
      "clip_i2t_loss",
      [](const F64Array& images, const F64Array& texts, double temperature) {
        return clip_i2t_loss(to_mat<double>(images), to_mat<double>(texts), temperature);
      },
      py::arg("images"), py::arg("texts"), py::arg("temperature") = 0.07);

  py::class_<CombinerParams<float>>(m, "CombinerParams")
      .def_property_readonly("d", [](const CombinerParams<float>& p) { return p.dims.d; })
      .def_property_readonly("p", [](const CombinerParams<float>& p) { return p.dims.p; })
      .def_property_readonly("h", [](const CombinerParams<float>& p) { return p.dims.h; })
      .def_readonly("dropout_rate", &CombinerParams<float>::dropout_rate)
      .def("parameter_count", [](const CombinerParams<float>& p) { return p.w.parameter_count(); })
      .def("__eq__", [](const CombinerParams<float>& a, const CombinerParams<float>& b) { return a.same_values(b); });

  m.def(
      "init_params",
      [](std::size_t d, std::size_t p, std::size_t h, double dropout, std::uint64_t seed) {
        auto dims = default_dims(d);
        if (p) dims.p = p;
        if (h) dims.h = h;
        return init_params<float>(dims, dropout, seed);
      },
      py::arg("d"), py::arg("p") = 0, py::arg("h") = 0, py::arg("dropout") = 0.5, py::arg("seed") = 0,
      "p and h default to 4d and 8d when zero.");
  m.def("save_checkpoint", &save_checkpoint, py::arg("params"), py::arg("path"));
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"), py::arg("expected_dim") = py::none());
  m.def(
      "compose_query",
      [](const CombinerParams<float>& params, const F32Array& image, const F32Array& text) {
        const auto q = compose_query(params, to_vec<float>(image).span(), to_vec<float>(text).span());
        return py::make_tuple(from_vec(q.vector), q.s);
      },
      py::arg("params"), py::arg("image"), py::arg("text"), "Returns (composed unit vector, dynamic scalar s).");

  m.def(
      "write_table",
      [](const std::filesystem::path& path, std::vector<std::string> ids, const F32Array& matrix,
         std::string source_tag) { write_table(make_table(std::move(ids), matrix, std::move(source_tag)), path); },
      py::arg("path"), py::arg("ids"), py::arg("matrix"), py::arg("source_tag") = "");
  m.def(
      "read_table", [](const std::filesystem::path& path) { return table_tuple(read_table(path)); }, py::arg("path"),
      "Returns (ids, float32 matrix, source_tag).");

  py::class_<GalleryIndex>(m, "GalleryIndex")
      .def(py::init([](std::vector<std::string> ids, const F32Array& matrix) {
             return GalleryIndex(make_table(std::move(ids), matrix, {}));
           }),
           py::arg("ids"), py::arg("matrix"))
      .def("__len__", &GalleryIndex::size)
      .def_property_readonly("dim", &GalleryIndex::dim)
      .def(
          "search",
          [](const GalleryIndex& index, const F32Array& query, std::size_t k, std::optional<std::string> exclude) {
            const auto r = search(index, to_vec<float>(query).span(), k, {}, exclude);
            std::vector<std::pair<std::string, float>> out;
            for (std::size_t i = 0; i < r.ids.size(); ++i) out.emplace_back(r.ids[i], r.scores[i]);
            return out;
          },
          py::arg("query"), py::arg("k"), py::arg("exclude") = py::none(),
          "Top-k (id, score) pairs by cosine, ties by ascending id.");

  m.def(
      "recall_at_k",
      [](const std::map<std::string, std::vector<std::string>>& rankings,
         const std::unordered_map<std::string, std::string>& ground_truth, std::size_t k) {
        std::vector<RankedResult> results;
        for (const auto& [qid, ids] : rankings) {
          RankedResult r;
          r.query_id = qid;
          r.ids = ids;
          r.scores.assign(ids.size(), 0.0f);
          r.complete = true;
          results.push_back(std::move(r));
        }
        return recall_at_k(results, ground_truth, k);
      },
      py::arg("rankings"), py::arg("ground_truth"), py::arg("k"),
      "rankings maps query id to its full ranked list of gallery ids.");
}
