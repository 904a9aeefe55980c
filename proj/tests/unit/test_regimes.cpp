#include "centrifuge/error.hpp"
#include "centrifuge/regimes.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <map>
#include <set>
#include <sstream>

using namespace centrifuge;

namespace {

struct Fixture {
    SyntheticSpec spec;
    LabelSchema schema;
    std::vector<Sample> samples;
    CentrifugeConfig config;

    explicit Fixture(std::size_t per_label = 12, SyntheticSubHeads heads = SyntheticSubHeads::generator) {
        spec.generators = 2;
        spec.styles = 2;
        spec.window = 16;
        spec.sub_heads = heads;
        schema = synthetic_schema(spec);
        samples = synth_corpus(spec, per_label);
        config = model_config_for(schema, 16, 4, NetConfig{4, 2, 8, 1}, NetConfig{4, 2, 8, 1});
    }
};

RegimeSpec quick(RegimeKind kind) {
    RegimeSpec s;
    s.kind = kind;
    s.pretrain_epochs = 2;
    s.train_epochs = 2;
    return s;
}

TrainConfig small_batches() {
    TrainConfig t;
    t.batch = 8;
    t.seed = 5;
    return t;
}

std::vector<Tensor> snapshot(const std::vector<Parameter*>& ps) {
    std::vector<Tensor> out;
    for (auto* p : ps) out.push_back(p->value);
    return out;
}

bool same(const std::vector<Parameter*>& ps, const std::vector<Tensor>& snap) {
    for (std::size_t i = 0; i < ps.size(); ++i)
        if (!(ps[i]->value == snap[i])) return false;
    return true;
}

} // namespace

TEST_CASE("phase ledger for every regime") {
    const std::map<RegimeKind, std::pair<std::string, std::string>> expect = {
        {RegimeKind::utl, {"Sub w/ L_S", "Main w/ L_M"}},
        {RegimeKind::dtl, {"Main w/ L_M", "Sub w/ L_M"}},
        {RegimeKind::uft, {"Sub w/ L_S", "Both w/ L_M"}},
        {RegimeKind::dft, {"Main w/ L_M", "Both w/ L_M"}},
        {RegimeKind::two_lf, {"none", "Both w/ L_M&L_S"}},
        {RegimeKind::baseline, {"none", "Both w/ L_M"}},
    };
    for (auto kind : kAllRegimes) CHECK(regime_ledger(kind) == expect.at(kind));
    CHECK(regime_phases(RegimeKind::dtl)[0].conditioning == Conditioning::ground_truth);
    CHECK(regime_phases(RegimeKind::dft)[0].conditioning == Conditioning::ground_truth);
    CHECK(regime_phases(RegimeKind::utl)[1].conditioning == Conditioning::predicted);
}

TEST_CASE("regime names parse") {
    for (auto kind : kAllRegimes) CHECK(parse_regime(to_string(kind)) == kind);
    CHECK(parse_regime("DTL") == RegimeKind::dtl);
    CHECK_THROWS_AS(parse_regime("xtl"), UsageError);
}

TEST_CASE("upstream transfer freezes the sub-net while training the main-net") {
    Fixture fx;
    CentrifugeModel m(fx.config, 1);
    TrainingData data(fx.samples, fx.config);
    RegimeRunner run(m, data, quick(RegimeKind::utl), small_batches());
    const auto main_before = snapshot(m.main_parameters());
    run.run_phase(0);
    CHECK(same(m.main_parameters(), main_before));
    const auto sub_after_pretrain = snapshot(m.sub_parameters());
    run.run_phase(1);
    CHECK(same(m.sub_parameters(), sub_after_pretrain));
    CHECK_FALSE(same(m.main_parameters(), main_before));
}

TEST_CASE("downstream transfer freezes the main-net while training the sub-net") {
    Fixture fx;
    CentrifugeModel m(fx.config, 2);
    TrainingData data(fx.samples, fx.config);
    RegimeRunner run(m, data, quick(RegimeKind::dtl), small_batches());
    const auto sub_before = snapshot(m.sub_parameters());
    run.run_phase(0);
    CHECK(same(m.sub_parameters(), sub_before));
    const auto main_after_pretrain = snapshot(m.main_parameters());
    run.run_phase(1);
    CHECK(same(m.main_parameters(), main_after_pretrain));
    CHECK_FALSE(same(m.sub_parameters(), sub_before));
    for (auto* p : m.parameters()) CHECK(p->trainable);
}

TEST_CASE("fine-tuning regimes update both nets in the second phase") {
    for (auto kind : {RegimeKind::uft, RegimeKind::dft}) {
        Fixture fx;
        CentrifugeModel m(fx.config, 3);
        TrainingData data(fx.samples, fx.config);
        RegimeRunner run(m, data, quick(kind), small_batches());
        run.run_phase(0);
        const auto subs = snapshot(m.sub_parameters());
        const auto mains = snapshot(m.main_parameters());
        run.run_phase(1);
        CHECK_FALSE(same(m.sub_parameters(), subs));
        CHECK_FALSE(same(m.main_parameters(), mains));
    }
}

TEST_CASE("phases must run in order") {
    Fixture fx;
    CentrifugeModel m(fx.config, 4);
    TrainingData data(fx.samples, fx.config);
    RegimeRunner run(m, data, quick(RegimeKind::uft), small_batches());
    CHECK(run.phase_count() == 2);
    CHECK_THROWS_AS(run.run_phase(1), StateError);
    run.run_phase(0);
    CHECK_THROWS_AS(run.run_phase(0), StateError);
    CHECK_THROWS_AS(run.run_phase(2), StateError);
    run.run_phase(1);
    CHECK(run.completed_phases() == 2);
}

TEST_CASE("joint training with zero weight reproduces the baseline step by step") {
    Fixture fx;
    CentrifugeModel a(fx.config, 6), b(fx.config, 6);
    TrainingData data(fx.samples, fx.config);
    RegimeSpec two = quick(RegimeKind::two_lf);
    two.beta = 0.0;
    RegimeRunner ra(a, data, two, small_batches());
    RegimeRunner rb(b, data, quick(RegimeKind::baseline), small_batches());
    ra.run_all();
    rb.run_all();
    REQUIRE(ra.history().size() == rb.history().size());
    REQUIRE(ra.history().size() == 4 * 6);
    for (std::size_t i = 0; i < ra.history().size(); ++i) {
        CHECK(ra.history()[i].main_loss == rb.history()[i].main_loss);
        CHECK(ra.history()[i].objective == rb.history()[i].objective);
    }
    auto pa = a.parameters(), pb = b.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);
}

TEST_CASE("joint training adds the weighted sub-net loss") {
    Fixture fx;
    CentrifugeModel m(fx.config, 7);
    TrainingData data(fx.samples, fx.config);
    RegimeSpec s = quick(RegimeKind::two_lf);
    s.beta = 0.5;
    RegimeRunner run(m, data, s, small_batches());
    run.run_all();
    for (const auto& h : run.history()) CHECK(std::abs(h.objective - (h.main_loss + 0.5 * h.sub_loss)) < 1e-12);
}

TEST_CASE("training is deterministic under a seed") {
    Fixture fx;
    CentrifugeModel a(fx.config, 8), b(fx.config, 8);
    std::vector<StepRecord> ha, hb;
    train_regime(a, fx.samples, fx.samples, fx.schema, quick(RegimeKind::dft), small_batches(), &ha);
    train_regime(b, fx.samples, fx.samples, fx.schema, quick(RegimeKind::dft), small_batches(), &hb);
    REQUIRE(ha.size() == hb.size());
    for (std::size_t i = 0; i < ha.size(); ++i) CHECK(ha[i].main_loss == hb[i].main_loss);
    CHECK(encode_checkpoint(a, "") == encode_checkpoint(b, ""));
}

TEST_CASE("regimes that use sub labels reject samples without them") {
    Fixture fx;
    auto unlabeled = fx.samples;
    for (auto& s : unlabeled) s.sub_labels.clear();
    TrainingData data(unlabeled, fx.config);
    CHECK_FALSE(data.has_sub_labels());
    for (auto kind : {RegimeKind::utl, RegimeKind::dtl, RegimeKind::uft, RegimeKind::dft, RegimeKind::two_lf}) {
        CentrifugeModel m(fx.config, 9);
        CHECK_THROWS_AS(RegimeRunner(m, data, quick(kind), small_batches()), InputError);
    }
    CentrifugeModel m(fx.config, 9);
    CHECK_NOTHROW(RegimeRunner(m, data, quick(RegimeKind::baseline), small_batches()));
}

TEST_CASE("labels outside the model are rejected") {
    Fixture fx;
    auto bad = fx.samples;
    bad[0].main_label = 99;
    CHECK_THROWS_AS(TrainingData(bad, fx.config), InputError);
    CHECK_THROWS_AS(TrainingData({}, fx.config), InputError);
}

TEST_CASE("evaluation counts agree with per-sample predictions") {
    Fixture fx(3);
    std::vector<Sample> six(fx.samples.begin(), fx.samples.begin() + 6);
    CentrifugeModel m(fx.config, 10);
    std::size_t main_hits = 0, sub_hits = 0;
    std::vector<std::vector<std::size_t>> confusion(4, std::vector<std::size_t>(4, 0));
    auto argmax = [](const Tensor& t) {
        std::size_t k = 0;
        for (std::size_t i = 1; i < t.size(); ++i)
            if (t[i] > t[k]) k = i;
        return k;
    };
    for (const auto& s : six) {
        ForwardResult r = m.forward_centrifuge(tokenize_bytes(s.bytes, 4));
        main_hits += argmax(r.y_main) == s.main_label;
        sub_hits += argmax(r.y_sub[0]) == s.sub_labels[0];
        ++confusion[s.main_label][argmax(r.y_main)];
    }
    Metrics met = evaluate(m, six, fx.schema, 4);
    CHECK(met.samples == 6);
    CHECK(met.main_acc == static_cast<double>(main_hits) / 6.0);
    CHECK(met.sub_acc[0] == static_cast<double>(sub_hits) / 6.0);
    CHECK(met.confusion == confusion);
}

TEST_CASE("grouped accuracy is never below sub accuracy") {
    Fixture fx(4);
    LabelSchema grouped;
    for (const auto& n : fx.schema.main_names) grouped.add_main(n);
    grouped.add_sub(0, "g0", "all");
    grouped.add_sub(0, "g1", "all");
    CentrifugeModel m(fx.config, 11);
    Metrics plain = evaluate(m, fx.samples, fx.schema);
    Metrics coarse = evaluate(m, fx.samples, grouped);
    CHECK(plain.grouped_acc[0] == plain.sub_acc[0]);
    CHECK(coarse.grouped_acc[0] >= coarse.sub_acc[0]);
    CHECK(coarse.grouped_acc[0] == 1.0);
}

TEST_CASE("k-fold split partitions and stratifies") {
    std::vector<Sample> samples;
    for (std::uint16_t label = 0; label < 3; ++label)
        for (int i = 0; i < 10 + label; ++i) samples.push_back(Sample{{0}, label, {}, {}, {}});
    auto folds = kfold_split(samples, 4, 3);
    REQUIRE(folds.size() == 4);
    std::vector<int> seen(samples.size(), 0);
    for (const auto& f : folds) {
        CHECK(f.train.size() + f.test.size() == samples.size());
        std::set<std::size_t> tr(f.train.begin(), f.train.end());
        for (auto i : f.test) {
            CHECK(tr.count(i) == 0);
            ++seen[i];
        }
        for (std::uint16_t label = 0; label < 3; ++label) {
            std::size_t n = 0;
            for (auto i : f.test) n += samples[i].main_label == label;
            const std::size_t total = 10 + label;
            CHECK(n >= total / 4);
            CHECK(n <= (total + 3) / 4);
        }
    }
    for (int s : seen) CHECK(s == 1);
    auto again = kfold_split(samples, 4, 3);
    for (std::size_t f = 0; f < 4; ++f) CHECK(again[f].test == folds[f].test);
    CHECK_FALSE(kfold_split(samples, 4, 4)[0].test == folds[0].test);
}

TEST_CASE("k-fold split rejects labels with fewer samples than folds") {
    std::vector<Sample> samples;
    for (int i = 0; i < 8; ++i) samples.push_back(Sample{{0}, 0, {}, {}, {}});
    for (int i = 0; i < 3; ++i) samples.push_back(Sample{{0}, 7, {}, {}, {}});
    try {
        kfold_split(samples, 4, 1);
        FAIL("expected an error");
    } catch (const InputError& e) {
        CHECK(std::string(e.what()).find("label 7") != std::string::npos);
    }
    CHECK_THROWS_AS(kfold_split(samples, 1, 1), ConfigError);
}

TEST_CASE("report lists each fold with mean and sample deviation") {
    Fixture fx(2);
    FoldReport rep;
    rep.regime = RegimeKind::dtl;
    for (double acc : {0.5, 0.7}) {
        Metrics m;
        m.main_acc = acc;
        m.sub_acc = {acc / 2};
        m.grouped_acc = {acc / 2};
        m.samples = 10;
        m.confusion.assign(4, std::vector<std::size_t>(4, 1));
        rep.folds.push_back(m);
    }
    const std::string text = format_report(rep, fx.schema);
    CHECK(text.find("pretrain Main w/ L_M\n") != std::string::npos);
    CHECK(text.find("train Sub w/ L_M\n") != std::string::npos);
    CHECK(text.find("fold 1 samples 10 main_acc 0.700000 sub_acc.0 0.350000 grouped_acc.0 0.350000\n") !=
          std::string::npos);
    CHECK(text.find("mean main_acc 0.600000 sd 0.141421\n") != std::string::npos);
    CHECK(text.find("confusion g0s0 2 2 2 2\n") != std::string::npos);
}

TEST_CASE("embedding export writes mean-pooled x' rows") {
    Fixture fx(2);
    CentrifugeModel m(fx.config, 12);
    const std::string csv = format_embeddings(m, fx.samples);
    std::istringstream in(csv);
    std::string header;
    std::getline(in, header);
    CHECK(header == "x0,x1,x2,x3,main,sub0");
    std::string row;
    std::size_t rows = 0;
    while (std::getline(in, row)) ++rows;
    CHECK(rows == fx.samples.size());

    ForwardResult r = m.forward_centrifuge(tokenize_bytes(fx.samples[0].bytes, 4));
    std::istringstream first(csv.substr(csv.find('\n') + 1));
    std::string cell;
    for (std::size_t c = 0; c < 4; ++c) {
        std::getline(first, cell, ',');
        double mean = 0;
        for (std::size_t p = 0; p < r.x_prime.rows(); ++p) mean += r.x_prime(p, c);
        mean /= static_cast<double>(r.x_prime.rows());
        CHECK(std::stod(cell) == doctest::Approx(mean).epsilon(1e-14));
    }
    CHECK(format_embeddings(m, fx.samples) == csv);
}

TEST_CASE("model config follows the schema") {
    Fixture fx(1, SyntheticSubHeads::style_generator);
    auto c = model_config_for(fx.schema, 16, 4, NetConfig{4, 2, 8, 1}, NetConfig{4, 2, 8, 1});
    CHECK(c.main_classes == 4);
    CHECK(c.sub_classes == std::vector<std::size_t>{2, 2});
    CHECK(c.cond_width() == 4);
}
