#include <catch2/catch_amalgamated.hpp>

#include <bcgan/data.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

using namespace bcgan;

namespace {

void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path);
    f << content;
}

} // namespace

TEST_CASE("toy2d_generate") {
    SECTION("zero noise collapses each class onto its mean") {
        const Dataset d = toy2d_generate(ToyKind::two_gaussians, 10, 0.0, 1);
        for (std::size_t i = 0; i < d.size(); ++i) {
            if (d.labels[i] == 0) {
                CHECK(d.features.at(i, 0) == 0.35);
                CHECK(d.features.at(i, 1) == 0.5);
            } else {
                CHECK(d.features.at(i, 0) == 0.65);
                CHECK(d.features.at(i, 1) == 0.5);
            }
        }
    }

    SECTION("classes are balanced") {
        const Dataset d = toy2d_generate(ToyKind::two_gaussians, 1000, 0.06, 3);
        int zeros = 0;
        for (int l : d.labels) zeros += (l == 0);
        CHECK(zeros == 500);
    }

    SECTION("deterministic by seed, features stay in the unit square") {
        const Dataset a = toy2d_generate(ToyKind::two_moons, 400, 0.05, 9);
        const Dataset b = toy2d_generate(ToyKind::two_moons, 400, 0.05, 9);
        CHECK(a.features.values == b.features.values);
        for (double v : a.features.values) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }

    SECTION("invalid arguments throw") {
        CHECK_THROWS_AS(toy2d_generate(ToyKind::two_gaussians, 1, 0.1, 0), std::invalid_argument);
        CHECK_THROWS_AS(toy2d_generate(ToyKind::two_gaussians, 10, -0.1, 0), std::invalid_argument);
        CHECK_THROWS_AS(toy_kind_from_name("spiral"), std::invalid_argument);
    }
}

TEST_CASE("class_prior") {
    Dataset d;
    d.schema = Schema::identity(1, 2);
    d.features = Tensor::zeros(4, 1);

    SECTION("balanced labels") {
        d.labels = {0, 0, 1, 1};
        const ClassPrior p = class_prior(d);
        CHECK(p.probabilities == std::vector<double>{0.5, 0.5});
    }

    SECTION("all one class with two declared classes") {
        d.features = Tensor::zeros(3, 1);
        d.labels = {0, 0, 0};
        const ClassPrior p = class_prior(d);
        CHECK(p.probabilities == std::vector<double>{1.0, 0.0});
    }

    SECTION("large multinomial sample concentrates near uniform") {
        Dataset big;
        big.schema = Schema::identity(1, 10);
        const std::size_t n = 10000;
        big.features = Tensor::zeros(n, 1);
        Rng rng(17);
        for (std::size_t i = 0; i < n; ++i) big.labels.push_back(static_cast<int>(rng.uniform_index(10)));
        const ClassPrior p = class_prior(big);
        double s = 0.0;
        for (double v : p.probabilities) {
            CHECK(v >= 0.09);
            CHECK(v <= 0.11);
            s += v;
        }
        CHECK(std::fabs(s - 1.0) < 1e-12);
    }

    SECTION("empty dataset throws") {
        Dataset empty;
        empty.schema = Schema::identity(1, 2);
        empty.features = Tensor::zeros(0, 1);
        CHECK_THROWS_AS(class_prior(empty), std::invalid_argument);
    }
}

TEST_CASE("split_half_random") {
    SECTION("disjoint cover with floor/ceil sizes") {
        const Dataset d = toy2d_generate(ToyKind::two_gaussians, 5, 0.05, 2);
        auto [a, b] = split_half_random(d, 7);
        CHECK(a.size() == 2);
        CHECK(b.size() == 3);
        std::multiset<double> seen;
        for (std::size_t i = 0; i < a.size(); ++i) seen.insert(a.features.at(i, 0));
        for (std::size_t i = 0; i < b.size(); ++i) seen.insert(b.features.at(i, 0));
        std::multiset<double> want;
        for (std::size_t i = 0; i < d.size(); ++i) want.insert(d.features.at(i, 0));
        CHECK(seen == want);
    }

    SECTION("same seed, same split") {
        const Dataset d = toy2d_generate(ToyKind::two_gaussians, 100, 0.05, 2);
        auto [a1, b1] = split_half_random(d, 42);
        auto [a2, b2] = split_half_random(d, 42);
        CHECK(a1.features.values == a2.features.values);
        CHECK(b1.labels == b2.labels);
    }

    SECTION("halves keep class proportions within 5 points on balanced data") {
        const Dataset d = toy2d_generate(ToyKind::two_gaussians, 10000, 0.05, 5);
        auto [a, b] = split_half_random(d, 11);
        for (const Dataset* part : {&a, &b}) {
            double zeros = 0;
            for (int l : part->labels) zeros += (l == 0);
            const double frac = zeros / static_cast<double>(part->size());
            CHECK(frac > 0.45);
            CHECK(frac < 0.55);
        }
    }
}

TEST_CASE("csv ingestion") {
    const std::string path = "data_ingest_test.csv";

    SECTION("min-max scaling of a continuous column") {
        write_file(path, "v,y\n2,A\n4,B\n6,A\n");
        IngestSpec spec;
        spec.columns = {{"v", ColumnDecl::Kind::continuous}, {"y", ColumnDecl::Kind::label}};
        const Dataset d = csv_ingest_fit(path, spec);
        CHECK(d.features.values == std::vector<double>{0.0, 0.5, 1.0});
        CHECK(d.labels == std::vector<int>{0, 1, 0});
        CHECK(d.schema.class_names == std::vector<std::string>{"A", "B"});
    }

    SECTION("one-hot expansion of a discrete column") {
        write_file(path, "color,y\nred,A\nblue,A\nred,B\n");
        IngestSpec spec;
        spec.columns = {{"color", ColumnDecl::Kind::discrete}, {"y", ColumnDecl::Kind::label}};
        const Dataset d = csv_ingest_fit(path, spec);
        CHECK(d.feature_dim() == 2);
        CHECK(d.features.values == std::vector<double>{1, 0, 0, 1, 1, 0});
    }

    SECTION("constant continuous column maps to 0.5") {
        write_file(path, "v,y\n7,A\n7,B\n");
        IngestSpec spec;
        spec.columns = {{"v", ColumnDecl::Kind::continuous}, {"y", ColumnDecl::Kind::label}};
        const Dataset d = csv_ingest_fit(path, spec);
        CHECK(d.features.values == std::vector<double>{0.5, 0.5});
    }

    SECTION("apply uses frozen statistics and clips") {
        write_file(path, "v,y\n0,A\n10,B\n");
        IngestSpec spec;
        spec.columns = {{"v", ColumnDecl::Kind::continuous}, {"y", ColumnDecl::Kind::label}};
        const Dataset train = csv_ingest_fit(path, spec);
        write_file(path, "v,y\n-5,A\n5,B\n20,A\n");
        const Dataset test = csv_ingest_apply(path, train.schema);
        CHECK(test.features.values == std::vector<double>{0.0, 0.5, 1.0});
    }

    SECTION("unknown category at apply becomes a zero group") {
        write_file(path, "color,y\nred,A\nblue,B\n");
        IngestSpec spec;
        spec.columns = {{"color", ColumnDecl::Kind::discrete}, {"y", ColumnDecl::Kind::label}};
        const Dataset train = csv_ingest_fit(path, spec);
        write_file(path, "color,y\ngreen,A\n");
        const Dataset test = csv_ingest_apply(path, train.schema);
        CHECK(test.features.values == std::vector<double>{0, 0});
    }

    SECTION("errors: bad numeric, missing label, undeclared column") {
        write_file(path, "v,y\nnope,A\n");
        IngestSpec spec;
        spec.columns = {{"v", ColumnDecl::Kind::continuous}, {"y", ColumnDecl::Kind::label}};
        CHECK_THROWS_AS(csv_ingest_fit(path, spec), std::runtime_error);

        write_file(path, "v\n1\n");
        CHECK_THROWS_AS(csv_ingest_fit(path, spec), std::runtime_error);

        write_file(path, "v,z,y\n1,2,A\n");
        CHECK_THROWS_AS(csv_ingest_fit(path, spec), std::runtime_error);
    }

    std::remove(path.c_str());
}

TEST_CASE("hardening soft one-hot groups") {
    Dataset d;
    SchemaColumn c;
    c.name = "cat";
    c.kind = SchemaColumn::Kind::one_hot;
    c.categories = {"a", "b", "c"};
    c.first_col = 0;
    c.width = 3;
    d.schema.columns = {c};
    d.schema.class_names = {"0"};
    d.features = Tensor::matrix(2, 3, {0.2, 0.5, 0.3, 0.4, 0.4, 0.1});
    d.labels = {0, 0};
    const Dataset h = harden_one_hot(d);
    CHECK(h.features.values == std::vector<double>{0, 1, 0, 1, 0, 0}); // tie -> lowest index
}

TEST_CASE("export and re-ingest round-trips") {
    const std::string csv = "data_export_test.csv";
    const std::string sidecar = "data_export_test.schema.json";

    SECTION("identity-schema data round-trips bit-exactly") {
        const Dataset d = toy2d_generate(ToyKind::two_gaussians, 64, 0.06, 13);
        export_csv(d, csv, sidecar);
        const Schema schema = schema_from_json(read_json_file(sidecar));
        const Dataset back = csv_ingest_apply(csv, schema);
        CHECK(back.features.values == d.features.values);
        CHECK(back.labels == d.labels);
    }

    SECTION("scaled continuous data round-trips within 1e-9") {
        write_file(csv, "v,w,y\n-3.5,100,A\n2.25,300,B\n0.125,250,A\n");
        IngestSpec spec;
        spec.columns = {{"v", ColumnDecl::Kind::continuous},
                        {"w", ColumnDecl::Kind::continuous},
                        {"y", ColumnDecl::Kind::label}};
        const Dataset d = csv_ingest_fit(csv, spec);
        export_csv(d, csv, sidecar);
        const Dataset back = csv_ingest_apply(csv, schema_from_json(read_json_file(sidecar)));
        for (std::size_t i = 0; i < d.features.numel(); ++i)
            CHECK(std::fabs(back.features.values[i] - d.features.values[i]) < 1e-9);
    }

    SECTION("schema serialization is bit-exact") {
        write_file(csv, "v,c,y\n0.1,red,A\n0.9,blue,B\n");
        IngestSpec spec;
        spec.columns = {{"v", ColumnDecl::Kind::continuous},
                        {"c", ColumnDecl::Kind::discrete},
                        {"y", ColumnDecl::Kind::label}};
        const Dataset d = csv_ingest_fit(csv, spec);
        const json j1 = schema_to_json(d.schema);
        const Schema s2 = schema_from_json(j1);
        CHECK(schema_to_json(s2) == j1);
        CHECK(s2.columns[0].min == d.schema.columns[0].min);
        CHECK(s2.columns[1].categories == d.schema.columns[1].categories);
    }

    std::remove(csv.c_str());
    std::remove(sidecar.c_str());
}
