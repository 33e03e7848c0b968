#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "samba/common.hpp"
#include "samba/eval.hpp"
#include "samba/io.hpp"
#include "samba/model.hpp"
#include "samba/rng.hpp"

using namespace samba;

namespace {

SynthConfig micro_synth_config(double noise) {
    SynthConfig c;
    c.sources = 3;
    c.targets = 6;
    c.regions = 3;
    c.subjects = 1;
    c.duration_s = 128.0;
    c.electro_rate_hz = 8.0;
    c.tr_s = 1.0;
    c.segment_s = 16.0;
    c.classes = 2;
    c.electro_noise_sd = noise;
    c.hemo_noise_sd = noise;
    c.components = {{0.12, 0.95, {1.0, 1.7}}};
    c.region_theta = {{1.0, 4.0, 1.0, 0.30, 14.0, 1.0},
                      {1.0, 6.0, 1.0, 0.35, 16.0, 1.0},
                      {1.0, 7.5, 1.0, 0.30, 16.0, 1.0}};
    c.seed = 77;
    return c;
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("samba_eval_" + std::to_string(std::rand()) + std::to_string(std::rand()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("spearman follows the average-tied-rank definition") {
    CHECK(spearman({1, 2, 2, 4}, {1, 2, 3, 4}) ==
          doctest::Approx(0.9486832980505138).epsilon(1e-12));

    CHECK(spearman({1, 2, 3, 4, 5}, {1, 2, 3, 4, 5}) == 1.0);
    CHECK(spearman({-3, 0, 7}, {10, 20, 30}) == 1.0);
    CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0).epsilon(1e-12));

    // Invariance under strictly monotone transforms of either argument.
    Rng rng(3);
    std::vector<double> v = rng.normal_vec(50);
    std::vector<double> cubed(v), shifted(v);
    for (double& x : cubed) x = x * x * x;
    for (double& x : shifted) x = std::exp(0.5 * x) + 2.0;
    CHECK(spearman(v, cubed) == 1.0);
    CHECK(spearman(shifted, v) == 1.0);
    std::vector<double> w = rng.normal_vec(50);
    CHECK(spearman(v, w) == doctest::Approx(spearman(cubed, w)).epsilon(1e-12));

    // Constant input is defined as zero correlation.
    CHECK(spearman({5, 5, 5, 5}, {1, 2, 3, 4}) == 0.0);
    CHECK(spearman({1, 2, 3, 4}, {2, 2, 2, 2}) == 0.0);

    // Ties on both sides still correlate through average ranks.
    CHECK(spearman({1, 1, 2, 2}, {3, 3, 4, 4}) == 1.0);

    CHECK_THROWS_AS(spearman({1, 2}, {1, 2}), ArgumentError);
    CHECK_THROWS_AS(spearman({1, 2, 3}, {1, 2, 3, 4}), DimensionError);
}

TEST_CASE("the oracle translator is an upper bound on noiseless data") {
    SUBCASE("pure region mixing reproduces the truth rank for rank") {
        SynthConfig sc = micro_synth_config(0.0);
        sc.mixing_leak = 0.0;  // region means recover the latents exactly
        const Dataset dataset = generate(sc);
        const WindowSet ws = split_windows(dataset, 8.0, 0.6, 0.2);
        REQUIRE_FALSE(ws.test.empty());

        const EvalReport report = evaluate_oracle(dataset, ws.test, 8.0);
        CHECK(report.windows_evaluated == ws.test.size());
        CHECK(report.windows_skipped == 0);
        CHECK(report.mean_spearman == 1.0);
        for (double p : report.per_parcel) CHECK(p == 1.0);
    }
    SUBCASE("cross-region leakage costs almost nothing without noise") {
        const Dataset dataset = generate(micro_synth_config(0.0));
        const WindowSet ws = split_windows(dataset, 8.0, 0.6, 0.2);
        const EvalReport report = evaluate_oracle(dataset, ws.test, 8.0);
        CHECK(report.mean_spearman > 0.99);
    }
}

TEST_CASE("oracle quality survives moderate noise") {
    const Dataset dataset = generate(micro_synth_config(0.1));
    const WindowSet ws = split_windows(dataset, 8.0, 0.6, 0.2);
    const EvalReport report = evaluate_oracle(dataset, ws.test, 8.0);
    CHECK(report.mean_spearman > 0.5);
    CHECK_THROWS_AS(oracle_translate(dataset, Tensor::zeros(5, 64)), DimensionError);
}

TEST_CASE("evaluate carves metric windows and averages parcels before windows") {
    const Dataset dataset = generate(micro_synth_config(0.05));
    const WindowSet ws = split_windows(dataset, 8.0, 0.6, 0.2);
    const double metric_s = 4.0;  // two metric windows per 8 s test window

    const EvalReport report = evaluate_oracle(dataset, ws.test, metric_s);
    CHECK(report.windows_evaluated == 2 * ws.test.size());

    // Manual replication of the protocol.
    const std::size_t samples = 4;
    const std::size_t stride = dataset.config.stride();
    std::vector<Tensor> full;
    for (const SubjectRecording& rec : dataset.subjects)
        full.push_back(oracle_translate(dataset, rec.electro));
    double manual_mean = 0.0;
    std::vector<double> manual_parcel(dataset.config.targets, 0.0);
    std::size_t count = 0;
    for (const Window& win : ws.test) {
        const std::size_t first = win.start / stride;
        const Tensor pred = slice_cols(full[win.subject], first, first + win.hemo.cols());
        for (std::size_t k = 0; k * samples + samples <= win.hemo.cols(); ++k) {
            double parcel_sum = 0.0;
            for (std::size_t p = 0; p < dataset.config.targets; ++p) {
                std::vector<double> a(samples), b(samples);
                for (std::size_t i = 0; i < samples; ++i) {
                    a[i] = pred.values()[p * pred.cols() + k * samples + i];
                    b[i] = win.hemo.values()[p * win.hemo.cols() + k * samples + i];
                }
                const double rho = spearman(a, b);
                parcel_sum += rho;
                manual_parcel[p] += rho;
            }
            manual_mean += parcel_sum / static_cast<double>(dataset.config.targets);
            ++count;
        }
    }
    manual_mean /= static_cast<double>(count);
    CHECK(report.mean_spearman == doctest::Approx(manual_mean).epsilon(1e-12));
    for (std::size_t p = 0; p < manual_parcel.size(); ++p)
        CHECK(report.per_parcel[p] ==
              doctest::Approx(manual_parcel[p] / static_cast<double>(count)).epsilon(1e-12));

    // Mean of per-parcel values equals the reported mean.
    double parcel_mean = 0.0;
    for (double p : report.per_parcel) parcel_mean += p;
    parcel_mean /= static_cast<double>(report.per_parcel.size());
    CHECK(std::abs(parcel_mean - report.mean_spearman) < 1e-12);
}

TEST_CASE("evaluate skips impossible metric windows with a log entry") {
    const Dataset dataset = generate(micro_synth_config(0.05));
    const WindowSet ws = split_windows(dataset, 8.0, 0.6, 0.2);

    const EvalReport wide = evaluate_oracle(dataset, ws.test, 9.0);
    CHECK(wide.windows_evaluated == 0);
    CHECK(wide.windows_skipped == ws.test.size());
    CHECK(wide.mean_spearman == 0.0);
    REQUIRE_FALSE(wide.skipped.empty());
    CHECK(wide.skipped[0].find("exceeds") != std::string::npos);

    const EvalReport narrow = evaluate_oracle(dataset, ws.test, 2.0);
    CHECK(narrow.windows_evaluated == 0);
    CHECK(narrow.windows_skipped == ws.test.size());
    REQUIRE_FALSE(narrow.skipped.empty());
    CHECK(narrow.skipped[0].find("too short") != std::string::npos);
}

TEST_CASE("untrained models score far from the oracle") {
    const Dataset dataset = generate(micro_synth_config(0.05));
    const WindowSet ws = split_windows(dataset, 8.0, 0.6, 0.2);

    Model model = build_model(micro_model_config(Direction::E2H), 41);
    set_target_graph(model, ws.train);
    const EvalReport e2h = evaluate(model, ws.test, 4.0);
    CHECK(e2h.windows_evaluated == 2 * ws.test.size());
    CHECK(std::abs(e2h.mean_spearman) < 0.5);  // the tight null bound needs full-scale data

    Model inverse = build_model(micro_model_config(Direction::H2E), 41);
    const EvalReport h2e = evaluate(inverse, ws.test, 4.0);
    CHECK(h2e.per_parcel.size() == 3);
    CHECK(h2e.windows_evaluated == 2 * ws.test.size());
    CHECK(std::abs(h2e.mean_spearman) < 0.5);
}

TEST_CASE("baseline translators train and evaluate") {
    const Dataset dataset = generate(micro_synth_config(0.05));
    const WindowSet ws = split_windows(dataset, 8.0, 0.6, 0.2);
    const ModelConfig cfg = micro_model_config(Direction::E2H);

    SUBCASE("per-step multilayer perceptron") {
        const MLPBaseline mlp = train_mlp_baseline(cfg, ws.train, 16, 30, 1e-2, 5);
        const Tensor pred = mlp_translate(mlp, ws.test[0].electro);
        CHECK(pred.rows() == 6);
        CHECK(pred.cols() == 8);

        const EvalReport report = evaluate_mlp(mlp, cfg, ws.test, 4.0);
        CHECK(report.windows_evaluated == 2 * ws.test.size());
        CHECK(report.mean_spearman >= -1.0);
        CHECK(report.mean_spearman <= 1.0);

        // Training moved it: the trained net beats a fresh one on train windows.
        const MLPBaseline fresh = train_mlp_baseline(cfg, ws.train, 16, 1, 1e-9, 5);
        double trained_loss = 0.0, fresh_loss = 0.0;
        for (const Window& w : ws.train) {
            trained_loss += cosine_match_loss(mlp_translate(mlp, w.electro), w.hemo).item();
            fresh_loss += cosine_match_loss(mlp_translate(fresh, w.electro), w.hemo).item();
        }
        CHECK(trained_loss < fresh_loss);
        CHECK_THROWS_AS(train_mlp_baseline(cfg, {}, 16, 1, 1e-2, 5), ConfigError);
    }

    SUBCASE("recurrent baseline") {
        const LSTMBaseline rnn = train_lstm_baseline(cfg, ws.train, 8, 3, 1e-2, 5);
        const Tensor pred = lstm_translate(rnn, ws.test[0].electro);
        CHECK(pred.rows() == 6);
        CHECK(pred.cols() == 8);
        const EvalReport report = evaluate_lstm(rnn, cfg, ws.test, 4.0);
        CHECK(report.windows_evaluated == 2 * ws.test.size());
        CHECK(std::abs(report.mean_spearman) <= 1.0);
    }
}

TEST_CASE("ablation sweeps return one row per case") {
    const Dataset dataset = generate(micro_synth_config(0.05));
    WindowSet ws = split_windows(dataset, 8.0, 0.6, 0.2);
    ws.train.resize(2);  // keep the sweep fast

    TrainConfig tc;
    tc.epochs = 1;
    tc.lr = 1e-3;
    tc.teacher_forcing_start = 0.0;
    tc.seed = 9;

    std::vector<AblationCase> grid;
    grid.push_back({"full", micro_model_config(Direction::E2H)});
    {
        ModelConfig c = micro_model_config(Direction::E2H);
        c.ablation.no_wavelet = true;
        grid.push_back({"no_wavelet", c});
    }
    {
        ModelConfig c = micro_model_config(Direction::H2E);
        c.ablation.no_skip_loss = true;
        grid.push_back({"h2e_no_skip", c});
    }
    {
        ModelConfig c = micro_model_config(Direction::E2H);
        c.ablation.transformer_decoder = true;
        c.ablation.no_lstm = true;  // invalid pair
        grid.push_back({"broken", c});
    }
    {
        ModelConfig c = micro_model_config(Direction::E2H);
        c.sources = 5;  // does not match the windows
        grid.push_back({"mismatched", c});
    }

    const std::vector<AblationRow> rows = run_ablations(grid, ws, tc, 4.0);
    REQUIRE(rows.size() == grid.size());
    CHECK(rows[0].name == "full");
    CHECK_FALSE(rows[0].skipped);
    CHECK(rows[0].finite);
    CHECK(std::isfinite(rows[0].test_spearman));
    CHECK_FALSE(rows[1].skipped);
    CHECK(rows[1].finite);
    CHECK_FALSE(rows[2].skipped);
    CHECK(rows[2].finite);
    CHECK(rows[2].final_reg >= 0.0);
    CHECK(rows[3].skipped);
    CHECK_FALSE(rows[3].reason.empty());
    CHECK(rows[4].skipped);
    CHECK_FALSE(rows[4].reason.empty());
}

TEST_CASE("report files follow the documented schema") {
    TempDir tmp;
    EvalReport a;
    a.direction = Direction::E2H;
    a.metric_window_s = 60.0;
    a.mean_spearman = 0.42;
    a.per_parcel = {0.4, 0.44};
    a.windows_evaluated = 10;
    EvalReport b;
    b.direction = Direction::H2E;
    b.metric_window_s = 15.0;
    b.mean_spearman = -0.1;
    b.per_parcel = {-0.2, 0.0, 0.1};
    b.windows_evaluated = 4;
    b.windows_skipped = 1;
    b.skipped = {"window 3: metric window exceeds the prediction span"};

    const auto csv = tmp.path / "eval.csv";
    const auto js = tmp.path / "eval.json";
    write_eval_reports({a, b}, csv, js, "deadbeefdeadbeef");

    const std::string text = read_text(csv);
    CHECK(text.find("metric,direction,window_s,parcel_id,value") != std::string::npos);
    CHECK(text.find("spearman,e2h,60,ALL,") != std::string::npos);
    CHECK(text.find("spearman,h2e,15,2,") != std::string::npos);
    std::size_t lines = 0;
    for (char ch : text)
        if (ch == '\n') ++lines;
    CHECK(lines == 1 + (1 + 2) + (1 + 3));  // header + ALL/parcel rows per report

    const nlohmann::json mirror = nlohmann::json::parse(read_text(js));
    CHECK(mirror.at("config_hash").get<std::string>() == "deadbeefdeadbeef");
    REQUIRE(mirror.at("reports").size() == 2);
    CHECK(mirror["reports"][0].at("direction") == "e2h");
    CHECK(mirror["reports"][0].at("mean_spearman").get<double>() == doctest::Approx(0.42));
    CHECK(mirror["reports"][1].at("windows_skipped").get<std::size_t>() == 1);
    CHECK(mirror["reports"][1].at("per_parcel").size() == 3);

    std::vector<AblationRow> rows(2);
    rows[0].name = "full";
    rows[0].final_total = 1.5;
    rows[0].final_match = 1.0;
    rows[0].final_reg = 0.5;
    rows[0].val_spearman = 0.3;
    rows[0].test_spearman = 0.25;
    rows[0].finite = true;
    rows[1].name = "broken";
    rows[1].skipped = true;
    rows[1].reason = "flags clash, with \"quotes\"";
    const auto acsv = tmp.path / "ablations.csv";
    write_ablation_csv(rows, acsv);
    const std::string atext = read_text(acsv);
    CHECK(atext.find("case,skipped,reason,final_total,final_match,final_reg,val_spearman,"
                     "test_spearman,finite") != std::string::npos);
    CHECK(atext.find("full,no,,") != std::string::npos);
    CHECK(atext.find("broken,yes,\"flags clash, with \"\"quotes\"\"\"") != std::string::npos);
}
