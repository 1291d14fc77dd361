#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>
#include <unordered_map>

#include "lorakit/errors.hpp"
#include "lorakit/rng.hpp"
#include "lorakit/tensor.hpp"
#include "testutil.hpp"

using namespace lorakit;
using testutil::check_all_close;
using testutil::check_close;
using testutil::check_gradient;

TEST_SUITE("numerics.rng") {
    TEST_CASE("same seed reproduces the stream") {
        Rng a(42), b(42);
        for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    }

    TEST_CASE("uniform stays in [0, 1)") {
        Rng rng(7);
        for (int i = 0; i < 10000; ++i) {
            double u = rng.uniform();
            CHECK(u >= 0.0);
            CHECK(u < 1.0);
        }
    }

    TEST_CASE("gaussian moments are sane") {
        Rng rng(11);
        const int n = 20000;
        double sum = 0.0, sq = 0.0;
        for (int i = 0; i < n; ++i) {
            double g = rng.gaussian();
            sum += g;
            sq += g * g;
        }
        double mean = sum / n;
        double var = sq / n - mean * mean;
        CHECK(std::abs(mean) < 0.05);
        CHECK(std::abs(var - 1.0) < 0.05);
    }

    TEST_CASE("below produces unbiased indices in range") {
        Rng rng(3);
        std::vector<int> counts(5, 0);
        for (int i = 0; i < 20000; ++i) {
            std::uint64_t v = rng.below(5);
            REQUIRE(v < 5);
            ++counts[v];
        }
        for (int c : counts) CHECK(std::abs(c - 4000) < 400);
    }

    TEST_CASE("shuffle is a permutation and seed-stable") {
        std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
        Rng rng(99);
        rng.shuffle(v);
        std::set<int> seen(v.begin(), v.end());
        CHECK(seen.size() == 10);

        std::vector<int> w{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
        Rng rng2(99);
        rng2.shuffle(w);
        CHECK(v == w);
    }

    TEST_CASE("bernoulli edge probabilities") {
        Rng rng(5);
        for (int i = 0; i < 100; ++i) CHECK_FALSE(rng.bernoulli(0.0));
    }

    TEST_CASE("derive separates streams") {
        std::uint64_t a = Rng::derive(1, {1, 2});
        std::uint64_t b = Rng::derive(1, {2, 1});
        std::uint64_t c = Rng::derive(1, {1, 2});
        std::uint64_t d = Rng::derive(2, {1, 2});
        CHECK(a == c);
        CHECK(a != b);
        CHECK(a != d);
    }
}

TEST_SUITE("numerics.tensor") {
    TEST_CASE("construction validates shape against data") {
        CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
        CHECK_THROWS_AS(Tensor::from_data({0}, {}), DimensionError);
        CHECK_THROWS_AS(Tensor::from_data({1}, {std::nan("")}), NumericError);
        CHECK_THROWS_AS(Tensor::scalar(INFINITY), NumericError);

        Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
        CHECK(t.rows() == 2);
        CHECK(t.cols() == 3);
        CHECK(t.numel() == 6);
        CHECK(t.at(1, 2) == 6.0);
        CHECK_THROWS_AS(t.at(2, 0), ContractError);
    }

    TEST_CASE("one dimensional tensors behave as single rows") {
        Tensor v = Tensor::from_data({3}, {1, 2, 3});
        CHECK(v.rows() == 1);
        CHECK(v.cols() == 3);
    }

    TEST_CASE("clone copies data and drops history") {
        Tensor a = Tensor::from_data({2}, {1, 2}, true);
        Tensor b = add(a, a);
        Tensor c = b.clone();
        CHECK(c.is_leaf());
        CHECK_FALSE(b.is_leaf());
        check_all_close(c.values(), {2, 4});
        c.values_mut()[0] = 99;
        CHECK(b.values()[0] == 2.0);
    }

    TEST_CASE("elementwise arithmetic forward and backward") {
        Tensor a = Tensor::from_data({2}, {1, 2}, true);
        Tensor b = Tensor::from_data({2}, {3, 5}, true);
        check_all_close(add(a, b).values(), {4, 7});
        check_all_close(sub(a, b).values(), {-2, -3});
        check_all_close(mul(a, b).values(), {3, 10});
        check_all_close(scale(a, -2.0).values(), {-2, -4});
        check_close(sum(mul(a, b)).value(), 13.0);

        Tensor loss = sum(mul(a, b));
        backward(loss);
        check_all_close(a.grad(), {3, 5});
        check_all_close(b.grad(), {1, 2});

        CHECK_THROWS_AS(add(a, Tensor::from_data({3}, {1, 2, 3})), DimensionError);
    }

    TEST_CASE("matmul matches the identity example") {
        Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
        Tensor col = Tensor::from_data({2, 1}, {5, 6});
        check_all_close(matmul(eye, col).values(), {5, 6});
    }

    TEST_CASE("matmul rejects mismatched inner dimensions with both shapes named") {
        Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
        try {
            matmul(a, a);
            FAIL("expected DimensionError");
        } catch (const DimensionError& e) {
            std::string msg = e.what();
            CHECK(msg.find("[2 x 3]") != std::string::npos);
        }
    }

    TEST_CASE("matmul gradient is exact") {
        Rng rng(17);
        Tensor a = Tensor::gaussian({3, 4}, 0.0, 1.0, rng, true);
        Tensor b = Tensor::gaussian({4, 2}, 0.0, 1.0, rng, true);
        check_gradient({a, b}, [&] { return sum(matmul(a, b)); });
    }

    TEST_CASE("linear computes x times transposed weight") {
        // weight rows are output neurons: y_o = <x, w_o>
        Tensor w = Tensor::from_data({2, 3}, {1, 0, 0, 0, 1, 0});
        Tensor x = Tensor::from_data({3}, {7, 8, 9});
        Tensor y = linear(x, w);
        CHECK(y.rank() == 1);
        check_all_close(y.values(), {7, 8});

        Tensor batch = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
        check_all_close(linear(batch, w).values(), {1, 2, 4, 5});
        CHECK_THROWS_AS(linear(Tensor::from_data({2}, {1, 2}), w), DimensionError);
    }

    TEST_CASE("linear gradient is exact") {
        Rng rng(18);
        Tensor x = Tensor::gaussian({3, 4}, 0.0, 1.0, rng, true);
        Tensor w = Tensor::gaussian({5, 4}, 0.0, 1.0, rng, true);
        check_gradient({x, w}, [&] { return sum(silu(linear(x, w))); });
    }

    TEST_CASE("silu matches its oracle values") {
        Tensor x = Tensor::from_data({3}, {1, -2, 3});
        check_all_close(silu(x).values(),
                        {0.7310585786300049, -0.23840584404423512, 2.8577223804672998});
    }

    TEST_CASE("silu survives extreme inputs") {
        Tensor x = Tensor::from_data({2}, {1000.0, -1000.0});
        Tensor y = silu(x);
        CHECK(y.values()[0] == doctest::Approx(1000.0));
        CHECK(y.values()[1] == doctest::Approx(0.0));
    }

    TEST_CASE("silu gradient") {
        Rng rng(19);
        Tensor x = Tensor::gaussian({2, 3}, 0.0, 2.0, rng, true);
        check_gradient({x}, [&] { return sum(silu(x)); });
    }

    TEST_CASE("rmsnorm matches its oracle values") {
        Tensor x = Tensor::from_data({2}, {3, 4});
        Tensor unit = Tensor::from_data({2}, {1, 1});
        check_all_close(rmsnorm(x, unit, 1e-6).values(),
                        {0.84852810348273355, 1.1313708046436448});

        Tensor gain = Tensor::from_data({2}, {0.5, 2.0});
        check_all_close(rmsnorm(x, gain, 1e-6).values(),
                        {0.42426405174136678, 2.2627416092872896});
    }

    TEST_CASE("rmsnorm validates arguments") {
        Tensor x = Tensor::from_data({2}, {3, 4});
        Tensor gain = Tensor::from_data({3}, {1, 1, 1});
        CHECK_THROWS_AS(rmsnorm(x, gain, 1e-6), DimensionError);
        CHECK_THROWS_AS(rmsnorm(x, Tensor::from_data({2}, {1, 1}), 0.0), ConfigError);
    }

    TEST_CASE("rmsnorm is stable on an all-zero row") {
        Tensor x = Tensor::zeros({4});
        Tensor gain = Tensor::full({4}, 1.0);
        check_all_close(rmsnorm(x, gain, 1e-6).values(), {0, 0, 0, 0});
    }

    TEST_CASE("rmsnorm gradient over rows and gain") {
        Rng rng(20);
        Tensor x = Tensor::gaussian({3, 4}, 0.0, 1.0, rng, true);
        Tensor gain = Tensor::gaussian({4}, 1.0, 0.1, rng, true);
        check_gradient({x, gain}, [&] { return sum(rmsnorm(x, gain, 1e-6)); });
    }

    TEST_CASE("softmax_rows matches its oracle and normalizes") {
        Tensor x = Tensor::from_data({2}, {1, 2});
        check_all_close(softmax_rows(x).values(), {0.2689414213699951, 0.7310585786300049});

        Rng rng(21);
        Tensor big = Tensor::gaussian({4, 7}, 0.0, 3.0, rng);
        Tensor y = softmax_rows(big);
        for (std::size_t r = 0; r < 4; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < 7; ++c) s += y.at(r, c);
            check_close(s, 1.0, 1e-12);
        }
    }

    TEST_CASE("softmax_rows is shift invariant and overflow safe") {
        Tensor x = Tensor::from_data({3}, {1000.0, 1001.0, 1002.0});
        Tensor small = Tensor::from_data({3}, {0.0, 1.0, 2.0});
        check_all_close(softmax_rows(x).values(), softmax_rows(small).values(), 1e-14);
    }

    TEST_CASE("softmax_rows gradient") {
        Rng rng(22);
        Tensor x = Tensor::gaussian({3, 5}, 0.0, 1.0, rng, true);
        Tensor pick = Tensor::gaussian({3, 5}, 0.0, 1.0, rng);
        check_gradient({x}, [&] { return sum(mul(softmax_rows(x), pick)); });
    }

    TEST_CASE("causal_softmax zeroes the strict upper triangle") {
        Rng rng(23);
        Tensor x = Tensor::gaussian({4, 4}, 0.0, 1.0, rng);
        Tensor y = causal_softmax(x);
        for (std::size_t r = 0; r < 4; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < 4; ++c) {
                if (c > r) CHECK(y.at(r, c) == 0.0);
                s += y.at(r, c);
            }
            check_close(s, 1.0, 1e-12);
        }
        // First row places all mass on the first column.
        CHECK(y.at(0, 0) == 1.0);
        // Last row agrees with a plain softmax over the full row.
        Tensor last = softmax_rows(row_slice(x, 3, 1));
        for (std::size_t c = 0; c < 4; ++c) check_close(y.at(3, c), last.at(0, c), 1e-14);

        CHECK_THROWS_AS(causal_softmax(Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6})),
                        DimensionError);
    }

    TEST_CASE("causal_softmax gradient") {
        Rng rng(24);
        Tensor x = Tensor::gaussian({4, 4}, 0.0, 1.0, rng, true);
        Tensor pick = Tensor::gaussian({4, 4}, 0.0, 1.0, rng);
        check_gradient({x}, [&] { return sum(mul(causal_softmax(x), pick)); });
    }

    TEST_CASE("rope rotates the first pair by the position angle") {
        Tensor x = Tensor::from_data({2}, {1, 0});
        check_all_close(rope_apply(x, 2, 10000.0).values(),
                        {-0.41614683654714241, 0.90929742682568171});
        // Position zero is the identity.
        check_all_close(rope_apply(x, 0, 10000.0).values(), {1, 0});
    }

    TEST_CASE("rope matches the four dimensional oracle") {
        Tensor x = Tensor::from_data({4}, {1, 2, 3, 4});
        check_all_close(rope_apply(x, 3, 10000.0).values(),
                        {-1.2722325127201799, -1.8388649851410237, 2.8786681004369798,
                         4.0881866356034369});
    }

    TEST_CASE("rope preserves norms and validates arguments") {
        Rng rng(25);
        Tensor x = Tensor::gaussian({1, 8}, 0.0, 1.0, rng);
        Tensor y = rope_apply(x, 12, 10000.0);
        double nx = 0.0, ny = 0.0;
        for (std::size_t i = 0; i < 8; ++i) {
            nx += x.values()[i] * x.values()[i];
            ny += y.values()[i] * y.values()[i];
        }
        check_close(ny, nx, 1e-12);

        CHECK_THROWS_AS(rope_apply(Tensor::from_data({3}, {1, 2, 3}), 1, 10000.0), ConfigError);
        CHECK_THROWS_AS(rope_apply(x, 1, -1.0), ConfigError);
    }

    TEST_CASE("rope_sequence applies per-head rotations at shifted positions") {
        Rng rng(26);
        Tensor x = Tensor::gaussian({3, 8}, 0.0, 1.0, rng);  // two heads of width 4
        Tensor y = rope_sequence(x, 2, 10000.0, 5);
        for (std::size_t t = 0; t < 3; ++t) {
            Tensor row = row_slice(x, t, 1);
            Tensor head0 = rope_apply(col_slice(row, 0, 4), 5 + t, 10000.0);
            Tensor head1 = rope_apply(col_slice(row, 4, 4), 5 + t, 10000.0);
            for (std::size_t i = 0; i < 4; ++i) {
                check_close(y.at(t, i), head0.at(0, i), 1e-14);
                check_close(y.at(t, 4 + i), head1.at(0, i), 1e-14);
            }
        }
        CHECK_THROWS_AS(rope_sequence(x, 3, 10000.0), ConfigError);
    }

    TEST_CASE("rope gradients") {
        Rng rng(27);
        Tensor x = Tensor::gaussian({2, 4}, 0.0, 1.0, rng, true);
        Tensor pick = Tensor::gaussian({2, 4}, 0.0, 1.0, rng);
        check_gradient({x}, [&] { return sum(mul(rope_apply(x, 7, 10000.0), pick)); });
        check_gradient({x}, [&] { return sum(mul(rope_sequence(x, 2, 10000.0, 3), pick)); });
    }

    TEST_CASE("embedding_rows gathers and scatters") {
        Tensor table = Tensor::from_data({3, 2}, {0, 1, 10, 11, 20, 21}, true);
        std::vector<int> ids{2, 0, 2};
        Tensor rows = embedding_rows(table, ids);
        check_all_close(rows.values(), {20, 21, 0, 1, 20, 21});

        backward(sum(rows));
        // Row 2 was gathered twice, so its gradient accumulates twice.
        check_all_close(table.grad(), {1, 1, 0, 0, 2, 2});

        std::vector<int> bad{3};
        CHECK_THROWS_AS(embedding_rows(table, bad), DataError);
        std::vector<int> neg{-1};
        CHECK_THROWS_AS(embedding_rows(table, neg), DataError);
    }

    TEST_CASE("slicing and concatenation round trip") {
        Tensor x = Tensor::from_data({3, 4}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}, true);
        check_all_close(row_slice(x, 1, 2).values(), {4, 5, 6, 7, 8, 9, 10, 11});
        check_all_close(last_row(x).values(), {8, 9, 10, 11});
        check_all_close(col_slice(x, 1, 2).values(), {1, 2, 5, 6, 9, 10});
        CHECK_THROWS_AS(row_slice(x, 2, 2), ContractError);
        CHECK_THROWS_AS(col_slice(x, 4, 1), ContractError);

        Tensor back = concat_cols({col_slice(x, 0, 1), col_slice(x, 1, 3)});
        check_all_close(back.values(), x.values());
        Tensor stacked = concat_rows({row_slice(x, 0, 2), row_slice(x, 2, 1)});
        check_all_close(stacked.values(), x.values());

        CHECK_THROWS_AS(concat_cols({x, Tensor::from_data({2, 2}, {1, 2, 3, 4})}),
                        DimensionError);
        CHECK_THROWS_AS(concat_rows({x, Tensor::from_data({2, 2}, {1, 2, 3, 4})}),
                        DimensionError);
    }

    TEST_CASE("slice and concat gradients") {
        Rng rng(28);
        Tensor x = Tensor::gaussian({3, 4}, 0.0, 1.0, rng, true);
        Tensor pick = Tensor::gaussian({2, 2}, 0.0, 1.0, rng);
        check_gradient({x}, [&] {
            Tensor part = col_slice(row_slice(x, 1, 2), 1, 2);
            return sum(mul(part, pick));
        });
        check_gradient({x}, [&] {
            Tensor joined = concat_cols({col_slice(x, 2, 2), col_slice(x, 0, 2)});
            return sum(mul(joined, x));
        });
    }

    TEST_CASE("dropout scales kept values and is seed deterministic") {
        Tensor x = Tensor::full({1000}, 1.0);
        Rng rng(31);
        Tensor y = dropout(x, 0.25, rng);
        int kept = 0;
        for (double v : y.values()) {
            if (v != 0.0) {
                check_close(v, 1.0 / 0.75, 1e-12);
                ++kept;
            }
        }
        CHECK(kept > 650);
        CHECK(kept < 850);

        Rng rng2(31);
        Tensor y2 = dropout(x, 0.25, rng2);
        check_all_close(y.values(), y2.values());

        // p = 0 keeps the input untouched.
        Rng rng3(31);
        Tensor same = dropout(x, 0.0, rng3);
        CHECK(same.same_storage(x));

        CHECK_THROWS_AS(dropout(x, 1.0, rng), ConfigError);
        CHECK_THROWS_AS(dropout(x, -0.1, rng), ConfigError);
    }

    TEST_CASE("dropout backward reuses the forward mask") {
        Tensor x = Tensor::from_data({4}, {1, 2, 3, 4}, true);
        Rng rng(32);
        Tensor y = dropout(x, 0.5, rng);
        backward(sum(y));
        for (std::size_t i = 0; i < 4; ++i) {
            if (y.values()[i] == 0.0) {
                CHECK(x.grad()[i] == 0.0);
            } else {
                check_close(x.grad()[i], 2.0, 1e-12);
            }
        }
    }
}

TEST_SUITE("numerics.autograd") {
    TEST_CASE("frozen leaves accumulate no gradient") {
        Tensor a = Tensor::from_data({2}, {1, 2}, true);
        Tensor b = Tensor::from_data({2}, {3, 4}, false);
        backward(sum(mul(a, b)));
        CHECK(a.has_grad());
        CHECK_FALSE(b.has_grad());
    }

    TEST_CASE("no-grad scope disables recording") {
        Tensor a = Tensor::from_data({2}, {1, 2}, true);
        {
            autograd::NoGradGuard guard;
            Tensor y = add(a, a);
            CHECK(y.is_leaf());
        }
        Tensor y = add(a, a);
        CHECK_FALSE(y.is_leaf());
        CHECK(std::string(y.op_kind()) == "add");
    }

    TEST_CASE("operations on inert inputs stay off the tape") {
        Tensor a = Tensor::from_data({2}, {1, 2}, false);
        Tensor y = add(a, a);
        CHECK(y.is_leaf());
    }

    TEST_CASE("backward validates its argument") {
        Tensor a = Tensor::from_data({2}, {1, 2}, true);
        CHECK_THROWS_AS(backward(add(a, a)), ContractError);   // non-scalar
        CHECK_THROWS_AS(backward(Tensor::scalar(1.0)), ContractError);  // detached
    }

    TEST_CASE("reused subexpressions accumulate through both paths") {
        Tensor x = Tensor::scalar(3.0, true);
        Tensor y = add(mul(x, x), x);  // x^2 + x
        backward(y);
        check_close(x.grad()[0], 7.0);  // 2x + 1
    }

    TEST_CASE("gradients accumulate across backward calls until zeroed") {
        Tensor x = Tensor::scalar(2.0, true);
        backward(mul(x, x));
        check_close(x.grad()[0], 4.0);
        backward(mul(x, x));
        check_close(x.grad()[0], 8.0);
        x.zero_grad();
        CHECK_FALSE(x.has_grad());
    }

    TEST_CASE("intermediate gradients are released after the sweep") {
        Tensor x = Tensor::scalar(2.0, true);
        Tensor mid = mul(x, x);
        Tensor loss = mul(mid, x);
        backward(loss);
        CHECK(x.has_grad());
        CHECK_FALSE(mid.has_grad());
        CHECK_FALSE(loss.has_grad());
        check_close(x.grad()[0], 12.0);  // d(x^3)/dx
    }

    TEST_CASE("tape orders inputs before consumers") {
        Rng rng(41);
        Tensor a = Tensor::gaussian({2, 2}, 0.0, 1.0, rng, true);
        Tensor b = silu(a);
        Tensor c = add(b, a);
        Tensor loss = sum(matmul(c, b));
        Tape tape = Tape::trace(loss);
        std::unordered_map<const detail::TensorImpl*, std::size_t> position;
        for (std::size_t i = 0; i < tape.nodes().size(); ++i) {
            position[tape.nodes()[i].output.get()] = i;
        }
        for (std::size_t i = 0; i < tape.nodes().size(); ++i) {
            for (const auto& input : tape.nodes()[i].inputs) {
                if (!input->is_leaf()) {
                    REQUIRE(position.count(input.get()) == 1);
                    CHECK(position[input.get()] < i);
                }
            }
        }
        CHECK(tape.nodes().back().output.get() == loss.impl().get());
    }

    TEST_CASE("deep chains do not overflow the stack") {
        Tensor x = Tensor::scalar(1.0, true);
        Tensor y = x;
        for (int i = 0; i < 20000; ++i) y = scale(y, 1.0);
        backward(y);
        check_close(x.grad()[0], 1.0);
    }

    TEST_CASE("non-finite results raise NumericError") {
        Tensor big = Tensor::full({2}, 1e308);
        CHECK_THROWS_AS(mul(big, big), NumericError);
        CHECK_THROWS_AS(scale(big, INFINITY), NumericError);
    }

    TEST_CASE("gaussian init is seed deterministic") {
        Rng a(55), b(55);
        Tensor t1 = Tensor::gaussian({4, 4}, 0.0, 0.02, a);
        Tensor t2 = Tensor::gaussian({4, 4}, 0.0, 0.02, b);
        check_all_close(t1.values(), t2.values());
    }
}
