"""Tests for distances, per-location factors, normalization and bundle assembly."""

import math

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given
from hypothesis import strategies as st

from airex.airquality.conf import POI_CATEGORIES, ROAD_CATEGORIES
from airex.airquality.data.schema import MeteoRecord, PoI, RoadSegment
from airex.airquality.exceptions import MissingDataError, VocabularyError
from airex.airquality.features import FeatureBuilder, build_features, fit_norm_table
from airex.airquality.geo import (
    EARTH_RADIUS_KM,
    FactorVector,
    GeoPoint,
    haversine_distance,
    meteo_factor,
    normalize_dataset,
    offset_point,
    poi_factor,
    relative_position,
    road_factor,
)
from airex.airquality.tests.factories import BEIJING, TIANJIN, make_dataset

CATEGORIES = ("factory", "park", "school")


def _haversine_many(origin: GeoPoint, lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
    lat1, lon1 = np.radians(origin.lat), np.radians(origin.lon)
    lat2, lon2 = np.radians(lats), np.radians(lons)
    h = (
        np.sin((lat2 - lat1) / 2) ** 2
        + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    )
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(h)))


class HaversineTest(SimpleTestCase):
    def test_beijing_tianjin(self) -> None:
        self.assertAlmostEqual(haversine_distance(BEIJING, TIANJIN), 113.8, delta=5.0)

    def test_identical_points(self) -> None:
        self.assertEqual(haversine_distance(BEIJING, BEIJING), 0.0)

    def test_quarter_equator(self) -> None:
        d = haversine_distance(GeoPoint(0.0, 0.0), GeoPoint(0.0, 90.0))
        self.assertAlmostEqual(d, EARTH_RADIUS_KM * math.pi / 2, places=6)
        self.assertAlmostEqual(d, 10007.5, delta=0.1)

    @given(
        st.floats(-89, 89), st.floats(-179, 179), st.floats(-89, 89), st.floats(-179, 179)
    )
    def test_symmetric_and_bounded(self, lat1, lon1, lat2, lon2) -> None:
        a, b = GeoPoint(lat1, lon1), GeoPoint(lat2, lon2)
        d = haversine_distance(a, b)
        self.assertAlmostEqual(d, haversine_distance(b, a), places=6)
        self.assertGreaterEqual(d, 0.0)
        self.assertLessEqual(d, EARTH_RADIUS_KM * math.pi + 1e-9)

    # kept away from antipodal triples, where arcsin near 1 loses precision
    @given(*[st.floats(-60, 60)] * 6)
    def test_triangle_inequality(self, lat1, lon1, lat2, lon2, lat3, lon3) -> None:
        a, b, c = GeoPoint(lat1, lon1), GeoPoint(lat2, lon2), GeoPoint(lat3, lon3)
        self.assertLessEqual(
            haversine_distance(a, c),
            haversine_distance(a, b) + haversine_distance(b, c) + 1e-9,
        )


class RelativePositionTest(SimpleTestCase):
    def test_coincident_points(self) -> None:
        pos = relative_position(BEIJING, BEIJING)
        self.assertEqual((pos.distance, pos.angle), (0.0, 0.0))

    def test_due_north(self) -> None:
        pos = relative_position(GeoPoint(0.0, 0.0), GeoPoint(1.0, 0.0))
        self.assertAlmostEqual(pos.angle, 0.0, places=12)
        self.assertAlmostEqual(pos.distance, EARTH_RADIUS_KM * math.pi / 180, places=6)
        self.assertAlmostEqual(pos.distance, 111.19, delta=0.01)

    def test_due_east(self) -> None:
        pos = relative_position(GeoPoint(0.0, 0.0), GeoPoint(0.0, 1.0))
        self.assertAlmostEqual(pos.angle, math.pi / 2, places=12)

    def test_angle_range(self) -> None:
        pos = relative_position(GeoPoint(0.0, 0.0), GeoPoint(-1.0, -1.0))
        self.assertTrue(-math.pi <= pos.angle <= math.pi)
        self.assertLess(pos.angle, 0.0)


class PoiFactorTest(SimpleTestCase):
    def test_empty_list(self) -> None:
        factor = poi_factor(BEIJING, [], CATEGORIES)
        np.testing.assert_array_equal(factor.values, [0.0, 0.0, 0.0])
        self.assertEqual(factor.schema, tuple(("poi", c) for c in CATEGORIES))

    def test_single_poi_in_radius(self) -> None:
        poi = PoI("p1", offset_point(BEIJING, 0.0, 0.5), "factory")
        factor = poi_factor(BEIJING, [poi], CATEGORIES)
        np.testing.assert_array_equal(factor.values, [1.0, 0.0, 0.0])

    def test_unknown_category_is_ignored(self) -> None:
        poi = PoI("p1", BEIJING, "spaceport")
        factor = poi_factor(BEIJING, [poi], CATEGORIES)
        np.testing.assert_array_equal(factor.values, [0.0, 0.0, 0.0])

    def test_outside_radius_is_not_counted(self) -> None:
        poi = PoI("p1", offset_point(BEIJING, 1.2, 0.0), "park")
        self.assertEqual(poi_factor(BEIJING, [poi], CATEGORIES).values.sum(), 0.0)

    def test_matches_brute_force_oracle(self) -> None:
        rng = np.random.default_rng(7)
        pois = [
            PoI(
                f"p{i}",
                offset_point(BEIJING, *rng.uniform(-2.0, 2.0, 2)),
                CATEGORIES[int(rng.integers(3))],
            )
            for i in range(100)
        ]
        lats = np.array([p.location.lat for p in pois])
        lons = np.array([p.location.lon for p in pois])
        inside = _haversine_many(BEIJING, lats, lons) <= 1.0
        expected = [
            sum(1 for p, hit in zip(pois, inside) if hit and p.category == c)
            for c in CATEGORIES
        ]
        np.testing.assert_array_equal(poi_factor(BEIJING, pois, CATEGORIES).values, expected)


class RoadFactorTest(SimpleTestCase):
    def test_empty_list(self) -> None:
        factor = road_factor(BEIJING, [], ROAD_CATEGORIES)
        np.testing.assert_array_equal(factor.values, [0.0, 0.0, 0.0])

    def test_segment_through_location(self) -> None:
        road = RoadSegment(
            "r1", offset_point(BEIJING, -3.0, 0.0), offset_point(BEIJING, 3.0, 0.0), "highway"
        )
        factor = road_factor(BEIJING, [road], ROAD_CATEGORIES)
        np.testing.assert_array_equal(factor.values, [1.0, 0.0, 0.0])

    def test_zero_length_segment_is_a_point(self) -> None:
        near = offset_point(BEIJING, 0.4, 0.0)
        far = offset_point(BEIJING, 1.6, 0.0)
        roads = [RoadSegment("r1", near, near, "trunk"), RoadSegment("r2", far, far, "trunk")]
        np.testing.assert_array_equal(
            road_factor(BEIJING, roads, ROAD_CATEGORIES).values, [0.0, 1.0, 0.0]
        )

    def test_matches_dense_sampling_oracle(self) -> None:
        rng = np.random.default_rng(11)
        roads, expected = [], np.zeros(3)
        u = np.linspace(0.0, 1.0, 1000)
        while len(roads) < 50:
            a = offset_point(BEIJING, *rng.uniform(-3.0, 3.0, 2))
            b = offset_point(BEIJING, *rng.uniform(-3.0, 3.0, 2))
            category = ROAD_CATEGORIES[int(rng.integers(3))]
            closest = _haversine_many(
                BEIJING, a.lat + u * (b.lat - a.lat), a.lon + u * (b.lon - a.lon)
            ).min()
            # skip segments grazing the circle where projection error could flip the result
            if abs(closest - 1.0) < 0.02:
                continue
            roads.append(RoadSegment(f"r{len(roads)}", a, b, category))
            if closest <= 1.0:
                expected[ROAD_CATEGORIES.index(category)] += 1
        np.testing.assert_array_equal(
            road_factor(BEIJING, roads, ROAD_CATEGORIES).values, expected
        )


class MeteoFactorTest(SimpleTestCase):
    def _record(self, **overrides) -> MeteoRecord:
        values = dict(
            city_id="A",
            t=0,
            weather="rain",
            temperature=12.5,
            pressure=1012.0,
            humidity=40.0,
            wind_speed=3.0,
            wind_direction="E",
        )
        values.update(overrides)
        return MeteoRecord(**values)

    def test_one_hot_and_numeric(self) -> None:
        factor = meteo_factor(self._record(), weather_vocab=("sunny", "rain", "cloud"))
        np.testing.assert_array_equal(factor.values[:3], [0.0, 1.0, 0.0])
        wind = factor.values[3:11]
        self.assertEqual(wind.sum(), 1.0)
        self.assertEqual(wind[2], 1.0)
        np.testing.assert_array_equal(factor.values[11:], [12.5, 1012.0, 40.0, 3.0])

    def test_zero_numeric_fields(self) -> None:
        record = self._record(temperature=0.0, pressure=0.0, humidity=0.0, wind_speed=0.0)
        np.testing.assert_array_equal(meteo_factor(record).values[-4:], np.zeros(4))

    def test_schema_walk(self) -> None:
        factor = meteo_factor(self._record(weather="fog", wind_direction="NW"))
        named = factor.as_dict()
        self.assertEqual(named[("meteo", "weather=fog")], 1.0)
        self.assertEqual(named[("meteo", "weather=sunny")], 0.0)
        self.assertEqual(named[("meteo", "wind_direction=NW")], 1.0)
        self.assertEqual(named[("meteo", "humidity")], 40.0)
        self.assertEqual(len(factor), 4 + 8 + 4)

    def test_unknown_value_names_field_and_value(self) -> None:
        with self.assertRaises(VocabularyError) as ctx:
            meteo_factor(self._record(weather="hail"))
        self.assertIn("weather", str(ctx.exception))
        self.assertIn("hail", str(ctx.exception))


class NormalizeTest(SimpleTestCase):
    schema = (("poi", "food"), ("poi", "shop"))

    def test_divides_by_max(self) -> None:
        factors = [FactorVector([v, 0.0], self.schema) for v in (2.0, 4.0, 8.0)]
        normalized, table = normalize_dataset(factors)
        np.testing.assert_array_equal([f.values[0] for f in normalized], [0.25, 0.5, 1.0])
        self.assertEqual(table.maxima[("poi", "food")], 8.0)

    def test_all_zero_entry_unchanged(self) -> None:
        factors = [FactorVector([1.0, 0.0], self.schema)] * 3
        normalized, _ = normalize_dataset(factors)
        np.testing.assert_array_equal([f.values[1] for f in normalized], [0.0, 0.0, 0.0])

    def test_stored_table_is_reused(self) -> None:
        _, table = normalize_dataset([FactorVector([4.0, 2.0], self.schema)])
        normalized, same = normalize_dataset([FactorVector([8.0, 1.0], self.schema)], table)
        self.assertIs(same, table)
        np.testing.assert_array_equal(normalized[0].values, [2.0, 0.5])

    @given(
        st.lists(
            st.tuples(st.floats(0, 1e4), st.floats(0, 1e4)), min_size=1, max_size=20
        )
    )
    def test_max_is_one_where_positive(self, rows) -> None:
        factors = [FactorVector(list(r), self.schema) for r in rows]
        normalized, _ = normalize_dataset(factors)
        values = np.stack([f.values for f in normalized])
        for column, raw in enumerate(np.array(rows).T):
            if raw.max() > 0:
                self.assertEqual(values[:, column].max(), 1.0)
            self.assertTrue(np.all((values[:, column] >= 0) & (values[:, column] <= 1)))

    @given(
        st.lists(
            st.tuples(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4)), min_size=1, max_size=20
        )
    )
    def test_normalizing_twice_changes_nothing(self, rows) -> None:
        normalized, _ = normalize_dataset([FactorVector(list(r), self.schema) for r in rows])
        again, table = normalize_dataset(normalized)
        for first, second in zip(normalized, again):
            np.testing.assert_array_equal(first.values, second.values)
        for m in table.maxima.values():
            self.assertIn(m, (0.0, 1.0))


class BuildFeaturesTest(SimpleTestCase):
    def setUp(self) -> None:
        self.target = offset_point(BEIJING, 1.0, 1.0)
        self.dataset = make_dataset(
            {"A": [BEIJING], "B": [TIANJIN, offset_point(TIANJIN, 2.0, 0.0)]}, hours=6
        )

    def test_window_one_single_station(self) -> None:
        bundle = build_features(self.target, "B", 2, 1, self.dataset, ["A"])
        self.assertEqual(bundle.x_tgt_series.values.shape[0], 1)
        self.assertEqual(list(bundle.x_city), ["A"])
        station = bundle.x_stn["AS01"]
        self.assertEqual(station.series.values.shape[0], 1)
        # raw reading of station 0 of city 0 at t=2
        self.assertEqual(station.series.values[0, -1], 21.0)

    def test_colocated_station_has_zero_distance(self) -> None:
        bundle = build_features(BEIJING, "B", 3, 2, self.dataset, ["A"])
        named = bundle.x_stn["AS01"].static.as_dict()
        self.assertEqual(named[("station_pos", "distance")], 0.0)

    def test_schema_lengths(self) -> None:
        bundle = build_features(self.target, "A", 4, 3, self.dataset, ["A", "B"])
        n_location = len(POI_CATEGORIES) + len(ROAD_CATEGORIES)
        n_meteo = 4 + 8 + 4
        self.assertEqual(len(bundle.x_tgt_static), n_location)
        self.assertEqual(len(bundle.x_tgt_series), n_meteo)
        self.assertEqual(bundle.x_tgt_series.values.shape, (3, n_meteo))
        for station in bundle.x_stn.values():
            self.assertEqual(len(station.static), n_location + 2)
            self.assertEqual(station.series.values.shape, (3, n_meteo + 1))
        self.assertEqual(bundle.city_stations, {"A": ("AS01",), "B": ("BS01", "BS02")})
        self.assertEqual({len(v) for v in bundle.x_city.values()}, {2})

    def test_provenance_lists_window_readings(self) -> None:
        bundle = build_features(self.target, "A", 4, 3, self.dataset, ["B"])
        self.assertEqual(
            bundle.provenance,
            {f"{sid}@{t}" for sid in ("BS01", "BS02") for t in (2, 3, 4)},
        )

    def test_missing_steps_listed(self) -> None:
        with self.assertRaises(MissingDataError) as ctx:
            build_features(self.target, "A", 1, 3, self.dataset, ["B"])
        errors = ctx.exception.errors
        self.assertIn("station BS01: missing t=-1..-1", errors)
        self.assertIn("station BS02: missing t=-1..-1", errors)
        self.assertIn("city A: missing t=-1..-1", errors)

    def test_normalized_with_training_maxima(self) -> None:
        table = fit_norm_table(self.dataset, ["A", "B"])
        builder = FeatureBuilder(self.dataset, window=3, norm_table=table)
        bundle = builder.build(BEIJING, "A", 5, ["B"])
        for station in bundle.x_stn.values():
            self.assertLessEqual(np.abs(station.static.values).max(), 1.0)
            self.assertLessEqual(np.abs(station.series.values).max(), 1.0)
        self.assertLessEqual(np.abs(bundle.x_tgt_series.values).max(), 1.0)
