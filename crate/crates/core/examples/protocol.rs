//! Parsing and encoding SMS lines.

use chrono::NaiveDate;
use materna::messaging::{encode_inbound, encode_outbound, parse_inbound, ErrCode, OutboundMessage};
use materna::registry::PhoneId;
use materna::scheduler::Trimester;

fn main() {
    for line in [
        "REG|07504432147|36.190000|44.010000|Sara|27",
        "SOS|07504432147|36.190000|44.010000",
        "CHG|07504432147|2012-11-20",
        "CNF|07504432147|2012-11-20",
        "SOS|07504432147|91.000000|44.010000",
        "REG|07504432147|36.19|44.01|Sara|27",
        "reg|07504432147|36.190000|44.010000|Sara|27",
    ] {
        match parse_inbound(line) {
            Ok(msg) => {
                let back = encode_inbound(&msg).unwrap();
                println!("ok   {line}\n     round trip equal: {}", back == line);
            }
            Err(e) => println!("err  {line}\n     {e}"),
        }
    }

    let phone: PhoneId = "07504432147".parse().unwrap();
    let replies = [
        OutboundMessage::Assign {
            phone: phone.clone(),
            facility_id: 3,
            facility_name: "Maternity Hospital".into(),
            distance_km: 3.7,
        },
        OutboundMessage::Remind { phone: phone.clone(), review_date: NaiveDate::from_ymd_opt(2012, 11, 20).unwrap() },
        OutboundMessage::Advice { phone: phone.clone(), trimester: Trimester::Second, text: "Drink water.".into() },
        OutboundMessage::Err { phone: None, code: ErrCode::BadMsg },
    ];
    for r in &replies {
        println!("out  {}", encode_outbound(r).unwrap());
    }
    let too_long = OutboundMessage::Advice { phone, trimester: Trimester::First, text: "x".repeat(251) };
    println!("251-char advice: {}", encode_outbound(&too_long).unwrap_err());
}
