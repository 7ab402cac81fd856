"""AT-command surface, data mode, and serial timing of the modem emulation."""

import pytest

from fieldcam.clock import Scheduler
from fieldcam.errors import AlreadyPowered
from fieldcam.metrics import SignalProfile
from fieldcam.modem import (
    MRT_TABLE,
    ModemSim,
    ModemTimings,
    SerialChannel,
    TranscriptLog,
)
from fieldcam.mqtt.broker import Broker
from fieldcam.mqtt.client import MqttClient, connect_over_link


def make_modem(signal=None, broker=None, timings=None):
    sched = Scheduler()
    channel = SerialChannel(sched)
    if broker is None:
        broker = Broker(sched)
    modem = ModemSim(sched, channel, broker=broker, signal=signal, timings=timings)
    return sched, channel, broker, modem


def command(sched, channel, text, settle=1.0):
    """Send one command line and run the clock forward."""
    channel.device_write(text.encode() + b"\r")
    sched.run_until(sched.now + settle)
    return channel.device_read(sched.now)


def open_and_connect(sched, channel, modem):
    modem.power_on(0.0)
    sched.run_until(5.0)
    channel.device_read(sched.now)
    command(sched, channel, 'AT+QMTOPEN=5,"broker.hivemq.com",1883', settle=6.0)
    return command(sched, channel, 'AT+QMTCONN=5,"clientExample"', settle=2.0)


class TestPower:
    def test_rdy_within_three_seconds(self):
        sched, channel, broker, modem = make_modem()
        modem.power_on(0.0)
        sched.run_until(3.0)
        assert b"RDY" in channel.device_read(3.0)

    def test_nothing_before_emission_time(self):
        sched, channel, broker, modem = make_modem()
        modem.power_on(0.0)
        sched.run_until(1.0)
        assert channel.device_read(1.0) == b""

    def test_double_power_on_rejected(self):
        sched, channel, broker, modem = make_modem()
        modem.power_on(0.0)
        with pytest.raises(AlreadyPowered):
            modem.power_on(0.5)

    def test_power_off_resets_links(self):
        sched, channel, broker, modem = make_modem(signal=SignalProfile(attach_delay=0))
        open_and_connect(sched, channel, modem)
        assert modem.links[5].state == "connected"
        modem.power_off(sched.now)
        assert modem.links[5].state == "closed"
        assert not modem.powered


class TestEchoAndErrors:
    def test_echo_precedes_response(self):
        sched, channel, broker, modem = make_modem()
        modem.power_on(0.0)
        sched.run_until(2.0)
        channel.device_read(sched.now)
        out = command(sched, channel, "AT+CSQ")
        assert out.startswith(b"AT+CSQ\r")
        assert b"+CSQ:" in out

    def test_unknown_command_gets_error(self):
        sched, channel, broker, modem = make_modem()
        modem.power_on(0.0)
        sched.run_until(2.0)
        out = command(sched, channel, "AT+XYZ")
        assert b"AT+XYZ\r" in out
        assert b"ERROR" in out

    def test_echo_can_be_disabled(self):
        sched, channel, broker, modem = make_modem()
        modem.power_on(0.0)
        sched.run_until(2.0)
        command(sched, channel, "ATE0")
        channel.device_read(sched.now)
        out = command(sched, channel, "AT")
        assert not out.startswith(b"AT\r")
        assert b"OK" in out

    def test_bytes_to_unpowered_modem_are_dropped(self):
        sched, channel, broker, modem = make_modem()
        out = command(sched, channel, "AT+CSQ")
        assert out == b""


class TestCsq:
    def test_searching_reports_99(self):
        sched, channel, broker, modem = make_modem(signal=SignalProfile(attach_delay=13.0))
        modem.power_on(0.0)
        sched.run_until(2.0)
        channel.device_read(sched.now)
        out = command(sched, channel, "AT+CSQ")
        assert b"+CSQ: 99,99" in out

    def test_registered_reports_configured_value(self):
        sched, channel, broker, modem = make_modem(signal=SignalProfile(attach_delay=13.0))
        modem.power_on(0.0)
        sched.run_until(20.0)
        channel.device_read(sched.now)
        out = command(sched, channel, "AT+CSQ")
        assert b"+CSQ: 21,0" in out

    def test_zero_attach_delay_registers_immediately(self):
        sched, channel, broker, modem = make_modem(signal=SignalProfile(attach_delay=0.0))
        modem.power_on(0.0)
        sched.run_until(2.0)
        channel.device_read(sched.now)
        out = command(sched, channel, "AT+CSQ")
        assert b"+CSQ: 21,0" in out


class TestQmtOpen:
    def test_open_success(self):
        sched, channel, broker, modem = make_modem()
        modem.power_on(0.0)
        sched.run_until(2.0)
        out = command(sched, channel, 'AT+QMTOPEN=5,"broker.hivemq.com",1883', settle=6.0)
        assert b"OK" in out and b"+QMTOPEN: 5,0" in out
        assert modem.links[5].state == "opened"

    def test_open_unreachable_broker(self):
        sched, channel, broker, modem = make_modem()
        broker.reachable = False
        modem.power_on(0.0)
        sched.run_until(2.0)
        out = command(sched, channel, 'AT+QMTOPEN=5,"broker.hivemq.com",1883', settle=6.0)
        assert b"+QMTOPEN: 5,3" in out
        assert modem.links[5].state == "closed"

    def test_reopen_reports_2(self):
        sched, channel, broker, modem = make_modem()
        modem.power_on(0.0)
        sched.run_until(2.0)
        command(sched, channel, 'AT+QMTOPEN=5,"broker.hivemq.com",1883', settle=6.0)
        out = command(sched, channel, 'AT+QMTOPEN=5,"broker.hivemq.com",1883', settle=6.0)
        assert b"+QMTOPEN: 5,2" in out


class TestQmtConn:
    def test_connect_then_query_reports_3(self):
        sched, channel, broker, modem = make_modem(signal=SignalProfile(attach_delay=0))
        out = open_and_connect(sched, channel, modem)
        assert b"+QMTCONN: 5,0,0" in out
        out = command(sched, channel, "AT+QMTCONN?")
        assert b"+QMTCONN: 5,3" in out
        assert "clientExample" in broker.sessions

    def test_query_before_connack_reports_2(self):
        sched, channel, broker, modem = make_modem(signal=SignalProfile(attach_delay=0))
        modem.power_on(0.0)
        sched.run_until(5.0)
        command(sched, channel, 'AT+QMTOPEN=5,"broker.hivemq.com",1883', settle=6.0)
        # query lands on the wire right behind the connect request, well
        # before the CONNACK round trip completes
        channel.device_write(b'AT+QMTCONN=5,"clientExample"\r')
        channel.device_write(b"AT+QMTCONN?\r")
        sched.run_until(sched.now + 0.2)
        assert b"+QMTCONN: 5,2" in channel.device_read(sched.now)
        sched.run_until(sched.now + 2.0)
        out = command(sched, channel, "AT+QMTCONN?")
        assert b"+QMTCONN: 5,3" in out

    def test_connect_on_closed_link_is_error(self):
        sched, channel, broker, modem = make_modem()
        modem.power_on(0.0)
        sched.run_until(2.0)
        out = command(sched, channel, 'AT+QMTCONN=5,"clientExample"')
        assert b"ERROR" in out


class TestQmtPub:
    def publish(self, payload, qos=0):
        sched, channel, broker, modem = make_modem(signal=SignalProfile(attach_delay=0))
        inbox = []
        sub = MqttClient("watcher", sched, on_message=lambda t, p: inbox.append((t, p)))
        connect_over_link(sub, broker, sched)
        sub.connect()
        sched.run_until_idle()
        sub.subscribe("testing", qos=qos)
        open_and_connect(sched, channel, modem)
        channel.device_read(sched.now)
        channel.device_write(f'AT+QMTPUB=5,0,{qos},0,"testing"\r'.encode())
        sched.run_until(sched.now + 1.0)
        prompt = channel.device_read(sched.now)
        channel.device_write(payload, kind="data")
        channel.device_write(b"\x1a\r", kind="data-end")
        sched.run_until(sched.now + 3.0)
        urc = channel.device_read(sched.now)
        return prompt, urc, inbox, broker

    def test_1500_byte_publish_fans_out(self):
        # data mode cannot carry 0x1A, hence Base64 payloads in practice
        payload = b"ABcd0189+/==" * 125
        assert len(payload) == 1500
        prompt, urc, inbox, broker = self.publish(payload)
        assert b">" in prompt
        assert b"+QMTPUB: 5,0,0" in urc
        assert inbox == [("testing", payload)]
        assert broker.published_log[0][1] == payload

    def test_payload_over_limit_rejected(self):
        prompt, urc, inbox, broker = self.publish(b"x" * 1549)
        assert b"+QMTPUB: 5,0,2" in urc
        assert inbox == []

    def test_empty_payload_publishes(self):
        prompt, urc, inbox, broker = self.publish(b"")
        assert b"+QMTPUB: 5,0,0" in urc
        assert inbox == [("testing", b"")]

    def test_qos1_urc_after_ack(self):
        prompt, urc, inbox, broker = self.publish(b"hello", qos=1)
        assert b"+QMTPUB: 5,0,0" in urc
        assert inbox == [("testing", b"hello")]

    def test_publish_without_connection_is_error(self):
        sched, channel, broker, modem = make_modem()
        modem.power_on(0.0)
        sched.run_until(2.0)
        out = command(sched, channel, 'AT+QMTPUB=5,0,0,0,"testing"')
        assert b"ERROR" in out

    def test_bare_0x1a_also_terminates_data_mode(self):
        sched, channel, broker, modem = make_modem(signal=SignalProfile(attach_delay=0))
        open_and_connect(sched, channel, modem)
        channel.device_write(b'AT+QMTPUB=5,0,0,0,"testing"\r')
        sched.run_until(sched.now + 1.0)
        channel.device_write(b"payload", kind="data")
        channel.device_write(b"\x1a", kind="data-end")  # no trailing CR
        sched.run_until(sched.now + 2.0)
        assert b"+QMTPUB: 5,0,0" in channel.device_read(sched.now)
        assert broker.published_log[-1][1] == b"payload"

    def test_connect_id_out_of_range_is_error(self):
        sched, channel, broker, modem = make_modem()
        modem.power_on(0.0)
        sched.run_until(2.0)
        out = command(sched, channel, 'AT+QMTOPEN=7,"broker.hivemq.com",1883')
        assert b"ERROR" in out


class TestQlts:
    def test_network_time_format(self):
        sched, channel, broker, modem = make_modem(signal=SignalProfile(attach_delay=0))
        modem.power_on(0.0)
        sched.run_until(2.0)
        channel.device_read(sched.now)
        out = command(sched, channel, "AT+QLTS=2")
        assert b'+QLTS: "24/01/02,03:04:0' in out
        assert b'+40"' in out

    def test_error_before_registration(self):
        sched, channel, broker, modem = make_modem(signal=SignalProfile(attach_delay=60.0))
        modem.power_on(0.0)
        sched.run_until(2.0)
        channel.device_read(sched.now)
        out = command(sched, channel, "AT+QLTS=2")
        assert b"+CME ERROR" in out

    def test_clock_advances(self):
        sched, channel, broker, modem = make_modem(signal=SignalProfile(attach_delay=0))
        modem.power_on(0.0)
        sched.run_until(2.0)
        channel.device_read(sched.now)
        first = command(sched, channel, "AT+QLTS=2", settle=1.0)
        second = command(sched, channel, "AT+QLTS=2", settle=1.0)
        t1 = first.split(b'"')[1]
        t2 = second.split(b'"')[1]
        assert t1 != t2


class TestTimingContracts:
    def test_latencies_validated_against_mrt(self):
        with pytest.raises(ValueError):
            ModemTimings(csq_latency=0.5)  # CSQ MRT is 300 ms
        with pytest.raises(ValueError):
            ModemTimings(rdy_delay=4.0)
        with pytest.raises(ValueError):
            ModemTimings(qmtpub_urc_latency=20.0)

    def test_responses_within_mrt_on_transcript(self):
        sched, channel, broker, modem = make_modem(signal=SignalProfile(attach_delay=0))
        open_and_connect(sched, channel, modem)
        command(sched, channel, "AT+CSQ")
        command(sched, channel, "AT+QLTS=2")
        entries = channel.transcript.entries
        # pair each echoed command with the next RX entry and check the gap
        for i, (t, direction, kind, data) in enumerate(entries):
            if direction != "RX" or not data.startswith(b"AT+"):
                continue
            name = data[3:].split(b"=")[0].split(b"?")[0].rstrip(b"\r").decode()
            mrt = MRT_TABLE.get(name)
            if mrt is None:
                continue
            response_times = [e[0] for e in entries[i + 1 :] if e[1] == "RX"]
            assert response_times and response_times[0] - t <= mrt

    def test_serial_rate_is_effective_9_bits(self):
        sched = Scheduler()
        channel = SerialChannel(sched, baud=115200)
        ready = channel.device_write(b"x" * 12800)
        assert ready == pytest.approx(1.0)  # 12800 B * 9 bits / 115200 bps


class TestTranscript:
    def test_lines_render_and_write(self, tmp_path):
        log = TranscriptLog()
        log.record(0.5, "TX", "line", b"AT+CSQ\r")
        log.record(0.6, "RX", "line", b"\r\n+CSQ: 21,0\r\n")
        log.record(0.7, "TX", "data", b"\x00" * 100)
        log.record(0.8, "TX", "data-end", b"\x1a\r")
        lines = log.lines()
        assert lines[0].endswith("TX AT+CSQ\\r")
        assert "<data 100B>" in lines[2]
        assert "<data-end 0x1A 0x0D>" in lines[3]
        path = tmp_path / "serial.log"
        log.write_to(path)
        assert path.read_text().count("\n") == 4
